//! Energy of the fixture model under a few hand-picked plans, with the
//! analytic cost provider and the default power-ratio table.
//!
//! cargo run --release --example energy_model

use std::path::Path;

use cforge::compress::prune::Granularity;
use cforge::compress::{CompressionPlan, Technique};
use cforge::energy::{analytic_cost_provider, default_rq_table, plan_energy};
use cforge::model::load_model;

fn main() -> cforge::Result<()> {
    let model = load_model(Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/model"))?;
    let profile = analytic_cost_provider(&model);
    let table = default_rq_table();
    println!("R_Q(5,5) = {}, P_FG = {}", table.ratio(5, 5), table.p_fg);

    let n = model.num_layers();
    let plans = [
        ("dense", CompressionPlan::noop(n)),
        ("fine S=0.5", CompressionPlan::uniform(n, Technique::Level, 0.5, 8)),
        ("coarse S=0.5", CompressionPlan::uniform(n, Technique::L1Ranked, 0.5, 8)),
        ("5-bit", CompressionPlan::uniform(n, Technique::Level, 0.0, 5)),
        ("coarse S=0.3, 4-bit", CompressionPlan::uniform(n, Technique::L2Ranked, 0.3, 4)),
    ];
    for (name, plan) in plans {
        let e = plan_energy(&model, &plan, &profile, &table, Granularity::Filter)?;
        let per_layer: Vec<String> = e.layers.iter().map(|l| format!("{:.0}", l.total)).collect();
        println!(
            "{name:>20}: total {:.0} of {:.0}, gain {:5.1}%  [{}]",
            e.total,
            e.baseline_total,
            e.gain * 100.0,
            per_layer.join(", ")
        );
    }
    Ok(())
}
