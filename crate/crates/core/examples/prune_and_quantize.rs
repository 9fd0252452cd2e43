//! Each of the seven pruning techniques applied to one layer of the fixture
//! model, then the whole model quantized to decreasing precision.
//!
//! cargo run --release --example prune_and_quantize

use cforge::compress::{CompressConfig, CompressionAction, CompressionPlan, Compressor, Technique};
use cforge::dataset::Split;
use cforge::model::{evaluate_accuracy, load_model};
use cforge::orchestrator::DataSplits;

fn main() -> cforge::Result<()> {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let model = load_model(root.join("model"))?;
    let data = DataSplits::load(root.join("data"))?;
    let val = data.validation.head(500);
    assert_eq!(val.split, Split::Validation);
    let comp = Compressor::new(model, &data.calibration, CompressConfig::default())?;
    let n = comp.dense().num_layers();
    println!("dense accuracy {:.3}", evaluate_accuracy(comp.dense(), &val)?);

    let layer = 3;
    for t in Technique::ALL {
        let mut plan = CompressionPlan::noop(n);
        plan.actions[layer] = CompressionAction::new(layer, t, 0.5, 8)?;
        let applied = comp.apply(&plan, 0)?;
        let a = &applied.achieved[layer];
        let mirrored: Vec<String> = applied
            .achieved
            .iter()
            .filter(|x| x.mirrored_from.is_some())
            .map(|x| format!("layer {} follows {}", x.layer, x.mirrored_from.unwrap()))
            .collect();
        println!(
            "{:>17} on layer {layer}: {:?}, sparsity {:.3} (coarse {:.3}, fine {:.3}), accuracy {:.3} {}",
            t.name(),
            a.granularity,
            a.total_sparsity,
            a.coarse_sparsity,
            a.fine_sparsity,
            evaluate_accuracy(&applied.model, &val)?,
            mirrored.join(", ")
        );
    }

    for bits in (2..=8).rev() {
        let applied = comp.apply(&CompressionPlan::uniform(n, Technique::Level, 0.0, bits), 0)?;
        let act = applied.quant[1].activation.map(|q| format!("input clip [{:.3}, {:.3}]", q.lo, q.hi));
        println!(
            "{bits}-bit weights and inputs: accuracy {:.3}; layer 1 {}",
            evaluate_accuracy(&applied.model, &val)?,
            act.unwrap_or_default()
        );
    }
    Ok(())
}
