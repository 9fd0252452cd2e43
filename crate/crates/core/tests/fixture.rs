mod common;

use std::fs;
use std::path::{Path, PathBuf};

use cforge::model::{evaluate_accuracy, load_model};
use cforge::orchestrator::DataSplits;
use sha2::{Digest, Sha256};

/// Digest of the shipped model and data blobs, as printed by
/// `cargo run --release --example make_fixture`.
const FIXTURE_DIGEST: &str = "653beae8a78fa86acd48cb51b5e1d72968fd566b21192ddb005b1c8dfec7470f";

fn blobs(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(blobs(&p));
        } else if p.extension().is_some_and(|x| x == "bin" || x == "json") {
            out.push(p);
        }
    }
    out
}

#[test]
fn fixture_digest_is_pinned() {
    let dir = common::fixture_dir();
    let mut files = blobs(&dir);
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        h.update(f.strip_prefix(&dir).unwrap().to_string_lossy().replace('\\', "/").as_bytes());
        h.update(fs::read(&f).unwrap());
    }
    let digest: String = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
    assert_eq!(digest, FIXTURE_DIGEST);
}

#[test]
fn fixture_model_shape_and_accuracy() {
    let dir = common::fixture_dir();
    let model = load_model(dir.join("model")).unwrap();
    assert_eq!(model.num_layers(), 6);
    assert_eq!(model.junctions.len(), 1);
    assert_eq!(model.num_classes, 10);
    assert!((40_000..=60_000).contains(&model.total_params()), "{}", model.total_params());
    let data = DataSplits::load(dir.join("data")).unwrap();
    assert_eq!((data.calibration.len(), data.validation.len(), data.test.len()), (256, 2000, 1000));
    assert!(evaluate_accuracy(&model, &data.validation).unwrap() >= 0.9);
    assert!(evaluate_accuracy(&model, &data.test).unwrap() >= 0.9);
}
