//! Per-layer metrics of a plan on the fixture's test split. Reads a plan
//! JSON when given, otherwise evaluates a hand-written mixed plan.
//!
//! cargo run --release --example evaluate_plan [-- PLAN.json]

use cforge::compress::{CompressionAction, CompressionPlan, Technique};
use cforge::orchestrator::{evaluate_plan, Environment, RunConfig};

fn main() -> cforge::Result<()> {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let cfg = RunConfig::load(root.join("fixture.toml"))?;
    let (env, data) = Environment::from_config(&cfg)?;
    let plan = match std::env::args().nth(1) {
        Some(p) => CompressionPlan::load(p)?,
        None => CompressionPlan::new(vec![
            CompressionAction::new(0, Technique::Level, 0.2, 8)?,
            CompressionAction::new(1, Technique::L1Ranked, 0.25, 6)?,
            CompressionAction::new(2, Technique::Sensitivity, 0.5, 6)?,
            CompressionAction::new(3, Technique::FmReconstruction, 0.3, 5)?,
            CompressionAction::new(4, Technique::Splicing, 0.5, 5)?,
            CompressionAction::new(5, Technique::Level, 0.4, 6)?,
        ]),
    };
    let m = evaluate_plan(&env, &plan, &data.test, cfg.seed)?;
    println!(
        "accuracy {:.4} (baseline {:.4}), loss {:.2}%, gain {:.2}%, reward {:.4} on {} samples",
        m.accuracy, m.baseline_accuracy, m.accuracy_loss, m.energy_gain, m.reward, m.samples
    );
    for l in &m.layers {
        println!(
            "  layer {}: {:>17} {:?} S {:.3}/{:.3} Q {} energy {:.0}/{:.0} ({:.1}%){}",
            l.layer,
            l.technique.name(),
            l.granularity,
            l.achieved_sparsity,
            l.requested_sparsity,
            l.bits,
            l.energy,
            l.baseline_energy,
            l.energy_gain,
            l.mirrored_from.map(|s| format!(", mask from layer {s}")).unwrap_or_default()
        );
    }
    Ok(())
}
