//! Per-technique sparsity sweep and the uniform versus mixed precision
//! comparison on the fixture.
//!
//! cargo run --release --example sweeps

use cforge::compress::Technique;
use cforge::orchestrator::{pruning_sweep, uniform_vs_mixed, Environment, RunConfig};

fn main() -> cforge::Result<()> {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let cfg = RunConfig::load(root.join("fixture.toml"))?;
    let (env, _) = Environment::from_config(&cfg)?;

    let levels = [0.1, 0.3, 0.5, 0.7, 0.9];
    let points = pruning_sweep(&env, &levels, cfg.seed, cfg.threads)?;
    println!("{:>17} {}", "loss % at S =", levels.map(|s| format!("{s:>6}")).join(""));
    for t in Technique::ALL {
        let row: String = points
            .iter()
            .filter(|p| p.technique == t)
            .map(|p| format!("{:>6.1}", p.accuracy_loss))
            .collect();
        println!("{:>17} {row}", t.name());
    }

    let r = uniform_vs_mixed(&env, 60, cfg.seed, cfg.threads)?;
    println!("uniform front:");
    for p in &r.uniform_front {
        println!("  {:?}: loss {:5.2}%, gain {:5.2}%", p.bits, p.accuracy_loss, p.energy_gain);
    }
    println!("mixed front:");
    for p in &r.mixed_front {
        println!("  {:?}: loss {:5.2}%, gain {:5.2}%", p.bits, p.accuracy_loss, p.energy_gain);
    }
    println!("mixed front weakly dominates the uniform one: {}", r.mixed_dominates);
    Ok(())
}
