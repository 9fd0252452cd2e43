//! Regenerates the bundled fixture: a synthetic 10-class 12x12 image set and
//! a six-layer residual CNN trained on it, weights snapped to the 8-bit grid.
//!
//! cargo run --release --example make_fixture [-- OUT_DIR]

use std::fs;
use std::path::{Path, PathBuf};

use cforge::compress::quant::quantize_weights;
use cforge::compress::{CompressionPlan, Compressor};
use cforge::dataset::{save_dataset, Dataset, Split};
use cforge::model::{
    evaluate_accuracy, loss_gradients_f64, save_model, InputTransform, Junction, Layer, LayerDescriptor, ModelGraph,
    Source,
};
use cforge::nn::Adam;
use cforge::orchestrator::{RewardMode, RunConfig};
use cforge::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

const SIDE: usize = 12;
const CLASSES: usize = 10;
const NOISE: f64 = 0.8;

struct Stroke {
    x: f64,
    y: f64,
    angle: f64,
    len: f64,
    amp: f64,
}

fn prototypes(rng: &mut ChaCha8Rng) -> Vec<Vec<Stroke>> {
    (0..CLASSES)
        .map(|_| {
            (0..3)
                .map(|_| Stroke {
                    x: rng.random_range(2.0..10.0),
                    y: rng.random_range(2.0..10.0),
                    angle: rng.random_range(0.0..std::f64::consts::PI),
                    len: rng.random_range(3.0..7.0),
                    amp: if rng.random::<bool>() { 1.0 } else { -0.8 },
                })
                .collect()
        })
        .collect()
}

fn render(strokes: &[Stroke], dx: f64, dy: f64, gain: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let noise = Normal::new(0.0, NOISE).unwrap();
    let mut img = vec![0.0f64; SIDE * SIDE];
    for s in strokes {
        let (c, sn) = (s.angle.cos(), s.angle.sin());
        for (i, v) in img.iter_mut().enumerate() {
            let px = (i % SIDE) as f64 - s.x - dx;
            let py = (i / SIDE) as f64 - s.y - dy;
            let along = (px * c + py * sn).clamp(-s.len / 2.0, s.len / 2.0);
            let (qx, qy) = (px - along * c, py - along * sn);
            *v += s.amp * gain * (-(qx * qx + qy * qy) / 1.2).exp();
        }
    }
    img.iter().map(|&v| (v + noise.sample(rng)) as f32).collect()
}

fn make_split(protos: &[Vec<Stroke>], n: usize, split: Split, rng: &mut ChaCha8Rng) -> Dataset {
    let mut values = Vec::with_capacity(n * SIDE * SIDE);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % CLASSES;
        let dx = rng.random_range(-1.5..1.5);
        let dy = rng.random_range(-1.5..1.5);
        let gain = rng.random_range(0.7..1.3);
        values.extend(render(&protos[c], dx, dy, gain, rng));
        labels.push(c as u32);
    }
    let inputs = Tensor::new(vec![n, 1, SIDE, SIDE], values).unwrap();
    Dataset::new(inputs, labels, CLASSES, split).unwrap()
}

fn he_tensor(shape: Vec<usize>, fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let d = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
    Tensor::from_fn(shape, |_| d.sample(rng) as f32)
}

fn architecture(rng: &mut ChaCha8Rng) -> ModelGraph {
    let conv = |i, cin, cout, hw, k, s, p| LayerDescriptor::conv(i, cin, cout, (hw, hw), k, s, p);
    let descs = [
        (conv(0, 1, 16, 12, 3, 1, 1), Source::Input, InputTransform::Identity, true),
        (conv(1, 16, 48, 12, 3, 2, 1), Source::Layer(0), InputTransform::Identity, true),
        (conv(2, 48, 48, 6, 1, 1, 0), Source::Layer(1), InputTransform::Identity, false),
        (conv(3, 48, 48, 6, 3, 1, 1), Source::Layer(1), InputTransform::Identity, true),
        (conv(4, 48, 48, 6, 3, 1, 1), Source::Layer(3), InputTransform::Identity, true),
        (LayerDescriptor::fc(5, 48, CLASSES), Source::Layer(4), InputTransform::GlobalAvgPool, false),
    ];
    let layers = descs
        .into_iter()
        .map(|(d, src, tr, relu)| {
            let w = he_tensor(d.weight_shape(), d.unit_len(), rng);
            Layer::new(d, src, tr, relu, w, Tensor::zeros(vec![d.out_channels])).unwrap()
        })
        .collect();
    let junctions = vec![Junction {
        producer: 2,
        consumer: 4,
    }];
    ModelGraph::new([1, SIDE, SIDE], layers, junctions).unwrap()
}

fn train(model: &mut ModelGraph, data: &Dataset, val: &Dataset, epochs: usize, rng: &mut ChaCha8Rng) {
    let mut weights: Vec<Vec<f64>> = model
        .layers
        .iter()
        .map(|l| l.weights.data().iter().map(|&v| v as f64).collect())
        .collect();
    let mut adam = Adam::new(2e-3);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..epochs {
        order.shuffle(rng);
        if epoch == epochs * 2 / 3 {
            adam.lr *= 0.3;
        }
        for chunk in order.chunks(32) {
            let batch = data.subset(chunk);
            let g = loss_gradients_f64(model, Some(&weights), &batch).unwrap();
            adam.step(weights.iter_mut().map(|w| w.as_mut_slice()).collect(), &g);
        }
        store(model, &weights);
        println!("epoch {epoch}: validation accuracy {:.4}", evaluate_accuracy(model, val).unwrap());
    }
}

fn store(model: &mut ModelGraph, weights: &[Vec<f64>]) {
    for (l, w) in model.layers.iter_mut().zip(weights) {
        for (d, &s) in l.weights.data_mut().iter_mut().zip(w) {
            *d = s as f32;
        }
    }
}

/// Re-quantizes until the weights sit exactly on their own 8-bit grid.
fn snap_to_grid(model: &mut ModelGraph) {
    for layer in &mut model.layers {
        for _ in 0..50 {
            let (_, q) = quantize_weights(&layer.weights, None, 8).unwrap();
            if q == layer.weights {
                break;
            }
            layer.weights = q;
        }
    }
}

fn fixture_digest(dir: &Path) -> String {
    let mut files: Vec<PathBuf> = walk(dir);
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        h.update(f.strip_prefix(dir).unwrap().to_string_lossy().replace('\\', "/").as_bytes());
        h.update(fs::read(&f).unwrap());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else if p.extension().is_some_and(|x| x == "bin" || x == "json") {
            out.push(p);
        }
    }
    out
}

fn main() {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures"));
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let protos = prototypes(&mut rng);
    let train_set = make_split(&protos, 3000, Split::TrainCalib, &mut rng);
    let calibration = make_split(&protos, 256, Split::TrainCalib, &mut rng);
    let validation = make_split(&protos, 2000, Split::Validation, &mut rng);
    let test = make_split(&protos, 1000, Split::Test, &mut rng);

    let mut model = architecture(&mut rng);
    println!("parameters: {}", model.total_params());
    train(&mut model, &train_set, &validation, 12, &mut rng);
    snap_to_grid(&mut model);

    let dense_val = evaluate_accuracy(&model, &validation).unwrap();
    let dense_test = evaluate_accuracy(&model, &test).unwrap();
    let noop = Compressor::new(model.clone(), &calibration, Default::default())
        .unwrap()
        .apply(&CompressionPlan::noop(model.num_layers()), 0)
        .unwrap();
    println!(
        "snapped: validation {dense_val:.4}, test {dense_test:.4}; no-op plan validation {:.4}",
        evaluate_accuracy(&noop.model, &validation).unwrap()
    );

    save_model(&model, out.join("model")).unwrap();
    save_dataset(&calibration, out.join("data/calibration")).unwrap();
    save_dataset(&validation, out.join("data/validation")).unwrap();
    save_dataset(&test, out.join("data/test")).unwrap();

    // Search settings tuned for the 200-episode budget on this model.
    let mut cfg = RunConfig {
        episodes: 200,
        warmup: 50,
        reward_mode: RewardMode::Broadcast,
        paths: cforge::orchestrator::Paths {
            model: Some("model".into()),
            dataset: Some("data".into()),
            ..Default::default()
        },
        ..RunConfig::default()
    };
    cfg.agent.warmup = cfg.warmup;
    cfg.agent.updates_per_episode = 32;
    cfg.agent.ddpg.actor_lr = 1e-4;
    cfg.agent.ddpg.critic_lr = 1e-3;
    cfg.agent.ddpg.sigma_init = 0.4;
    fs::write(out.join("fixture.toml"), cfg.to_toml().unwrap()).unwrap();
    println!("fixture digest: {}", fixture_digest(&out));
}
