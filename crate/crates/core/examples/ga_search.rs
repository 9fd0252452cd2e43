//! NSGA-II on a toy sphere objective, then on the fixture with the same
//! evaluator and budget as the agent search.
//!
//! cargo run --release --example ga_search [-- EVALUATIONS]

use cforge::nsga2::{evolve, history_csv, Nsga2Config};
use cforge::orchestrator::{run_ga_search, Environment, RunConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> cforge::Result<()> {
    let optimum = [0.2, 0.7, 0.5, 0.9];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let r = evolve(optimum.len(), &Nsga2Config::default(), &mut rng, |pop| {
        Ok(pop
            .iter()
            .map(|g| -g.iter().zip(optimum).map(|(x, o)| (x - o).powi(2)).sum::<f64>())
            .collect())
    })?;
    println!(
        "sphere: best {:?} (reward {:.2e}) after {} evaluations",
        r.best.genes.iter().map(|g| (g * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
        r.best.reward,
        r.evaluations
    );
    print!("{}", history_csv(&r.history[..5])?);

    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let episodes = std::env::args().nth(1).map_or(100, |s| s.parse().expect("evaluation count"));
    let cfg = RunConfig {
        episodes,
        // the GA has no warm-up phase
        warmup: 0,
        ..RunConfig::load(root.join("fixture.toml"))?
    };
    let (env, _) = Environment::from_config(&cfg)?;
    let report = run_ga_search(&cfg, &env)?;
    println!(
        "fixture: best loss {:.2}%, gain {:.2}%, reward {:.4} at evaluation {} of {}",
        report.best.accuracy_loss,
        report.best.energy_gain,
        report.best.reward,
        report.best.episode,
        report.records.len()
    );
    Ok(())
}
