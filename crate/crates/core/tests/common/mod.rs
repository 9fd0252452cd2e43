//! Builders shared by the integration and acceptance targets.

#![allow(dead_code)]

use std::path::PathBuf;

use cforge::dataset::{Dataset, Split};
use cforge::model::{InputTransform, Junction, Layer, LayerDescriptor, ModelGraph, Source};
use cforge::orchestrator::RunConfig;
use cforge::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn fixture_config() -> RunConfig {
    RunConfig::load(fixture_dir().join("fixture.toml")).expect("fixture config")
}

fn random_tensor(shape: Vec<usize>, scale: f32, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-scale..scale))
}

pub fn conv(
    index: usize,
    cin: usize,
    cout: usize,
    hw: usize,
    kernel: usize,
    stride: usize,
    source: Source,
    relu: bool,
    rng: &mut impl Rng,
) -> Layer {
    let d = LayerDescriptor::conv(index, cin, cout, (hw, hw), kernel, stride, kernel / 2);
    let scale = 1.0 / ((cin * kernel * kernel) as f32).sqrt();
    Layer::new(
        d,
        source,
        InputTransform::Identity,
        relu,
        random_tensor(d.weight_shape(), scale, rng),
        random_tensor(vec![cout], 0.1, rng),
    )
    .unwrap()
}

pub fn fc(index: usize, inputs: usize, outputs: usize, source: Source, transform: InputTransform, rng: &mut impl Rng) -> Layer {
    let d = LayerDescriptor::fc(index, inputs, outputs);
    let scale = 1.0 / (inputs as f32).sqrt();
    Layer::new(
        d,
        source,
        transform,
        false,
        random_tensor(d.weight_shape(), scale, rng),
        random_tensor(vec![outputs], 0.1, rng),
    )
    .unwrap()
}

/// Stem conv, a two-conv residual block whose last conv adds the stem
/// output, and a pooled classifier: layer 0 is the shortcut side and layer
/// 2 the block's last conv.
pub fn toy_residual(seed: u64) -> ModelGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = 8;
    ModelGraph::new(
        [2, 6, 6],
        vec![
            conv(0, 2, c, 6, 3, 1, Source::Input, true, &mut rng),
            conv(1, c, c, 6, 3, 1, Source::Layer(0), true, &mut rng),
            conv(2, c, c, 6, 3, 1, Source::Layer(1), true, &mut rng),
            fc(3, c, 4, Source::Layer(2), InputTransform::GlobalAvgPool, &mut rng),
        ],
        vec![Junction {
            producer: 0,
            consumer: 2,
        }],
    )
    .unwrap()
}

/// Small random net for gradient checks: optional residual add, strided
/// conv, and either a pooled or a flattened classifier.
pub fn random_net(seed: u64) -> ModelGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let residual = rng.random_bool(0.5);
    let flatten = rng.random_bool(0.5);
    let c0 = rng.random_range(1..=3);
    let c1 = rng.random_range(2..=4);
    let classes = rng.random_range(2..=4);
    let mut layers = vec![
        conv(0, c0, c1, 5, 3, 1, Source::Input, true, &mut rng),
        conv(1, c1, c1, 5, 3, 1, Source::Layer(0), !residual, &mut rng),
    ];
    let mut junctions = Vec::new();
    if residual {
        layers.push(conv(2, c1, c1, 5, 1, 1, Source::Layer(1), true, &mut rng));
        junctions.push(Junction {
            producer: 0,
            consumer: 2,
        });
    }
    let last = layers.len() - 1;
    let strided = conv(layers.len(), c1, c1, 5, 3, 2, Source::Layer(last), true, &mut rng);
    let out = strided.desc.output_shape();
    layers.push(strided);
    let src = Source::Layer(layers.len() - 1);
    let head = if flatten {
        fc(layers.len(), out.iter().product(), classes, src, InputTransform::Flatten, &mut rng)
    } else {
        fc(layers.len(), out[0], classes, src, InputTransform::GlobalAvgPool, &mut rng)
    };
    layers.push(head);
    ModelGraph::new([c0, 5, 5], layers, junctions).unwrap()
}

/// Gaussian-ish inputs with uniformly drawn labels.
pub fn random_dataset(model: &ModelGraph, n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [c, h, w] = model.input_shape;
    let inputs = random_tensor(vec![n, c, h, w], 1.0, &mut rng);
    let labels = (0..n).map(|_| rng.random_range(0..model.num_classes as u32)).collect();
    Dataset::new(inputs, labels, model.num_classes, Split::TrainCalib).unwrap()
}
