//! A short agent search on the fixture, with a checkpoint written and read
//! back at the end.
//!
//! cargo run --release --example agent_search [-- EPISODES]

use cforge::agents::{load_checkpoint, save_checkpoint};
use cforge::orchestrator::{run_search, Environment, RunConfig};

fn main() -> cforge::Result<()> {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let episodes = std::env::args().nth(1).map_or(60, |s| s.parse().expect("episode count"));
    let cfg = RunConfig {
        episodes,
        warmup: episodes / 4,
        ..RunConfig::load(root.join("fixture.toml"))?
    };
    let (env, _) = Environment::from_config(&cfg)?;
    println!("baseline accuracy {:.3} on {} samples", env.baseline_accuracy, env.validation.len());
    let (report, agent) = run_search(&cfg, &env, |r, _| {
        if r.episode % 10 == 9 || r.unlock_event {
            println!(
                "episode {:>4}: loss {:5.2}%, gain {:5.2}%, reward {:7.4}, sigma {:.3}{}",
                r.episode,
                r.accuracy_loss,
                r.energy_gain,
                r.reward,
                r.sigma.unwrap_or(0.0),
                if r.unlock_event { ", technique agent unlocked" } else { "" }
            );
        }
        Ok(())
    })?;
    println!(
        "best: episode {}, loss {:.2}%, gain {:.2}%, reward {:.4}",
        report.best.episode, report.best.accuracy_loss, report.best.energy_gain, report.best.reward
    );
    for a in &report.best.plan.actions {
        println!("  layer {}: {} S={:.3} Q={}", a.layer, a.technique, a.sparsity, a.bits);
    }
    println!("{} points on the visited Pareto front", report.pareto.len());

    let dir = tempfile_dir();
    save_checkpoint(&agent, &dir)?;
    let restored = load_checkpoint(&dir, cfg.seed)?;
    assert_eq!(restored.ddpg.actor.flat_params().len(), agent.ddpg.actor.flat_params().len());
    println!("checkpoint round trip through {} at episode {}", dir.display(), restored.episode);
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

fn tempfile_dir() -> std::path::PathBuf {
    std::env::temp_dir().join(format!("cforge-agent-{}", std::process::id()))
}
