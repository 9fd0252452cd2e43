mod common;

use cforge::compress::{CompressConfig, CompressionAction, CompressionPlan, Compressor, Granularity, Technique};
use cforge::dataset::{load_dataset, save_dataset, Split};
use cforge::model::{
    conv2d_forward, evaluate_accuracy, fc_forward, load_model, model_forward, save_model, InputTransform, Junction,
    Layer, LayerDescriptor, ModelGraph, Source,
};
use cforge::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn identity_conv(channels: usize, hw: usize) -> Layer {
    let d = LayerDescriptor::conv(0, channels, channels, (hw, hw), 1, 1, 0);
    let w = Tensor::from_fn(d.weight_shape(), |i| if i / channels == i % channels { 1.0 } else { 0.0 });
    Layer::new(d, Source::Input, InputTransform::Identity, false, w, Tensor::zeros(vec![channels])).unwrap()
}

#[test]
fn one_by_one_identity_conv() {
    let layer = identity_conv(3, 4);
    let x = Tensor::from_fn(vec![3, 4, 4], |i| i as f32 * 0.5 - 3.0);
    assert_eq!(conv2d_forward(&x, &layer).unwrap(), x);
    assert!(conv2d_forward(&Tensor::zeros(vec![2, 4, 4]), &layer).is_err());
}

#[test]
fn conv_output_geometry() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let layer = common::conv(0, 2, 5, 7, 3, 2, Source::Input, false, &mut rng);
    let y = conv2d_forward(&Tensor::zeros(vec![2, 7, 7]), &layer).unwrap();
    // padding 1: floor((7 + 2 - 3) / 2) + 1
    assert_eq!(y.shape(), &[5, 4, 4]);
    // zero input leaves only the bias
    assert_eq!(y.data()[0], layer.bias.data()[0]);
}

#[test]
fn fc_forward_matches_hand_product() {
    let d = LayerDescriptor::fc(0, 2, 2);
    let layer = Layer::new(
        d,
        Source::Input,
        InputTransform::Identity,
        false,
        Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
        Tensor::new(vec![2], vec![0.5, -0.5]).unwrap(),
    )
    .unwrap();
    let y = fc_forward(&Tensor::new(vec![2], vec![1.0, 1.0]).unwrap(), &layer).unwrap();
    assert_eq!(y.data(), &[3.5, 6.5]);
}

#[test]
fn residual_with_zero_second_conv_passes_the_shortcut() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let stem = common::conv(0, 1, 2, 4, 3, 1, Source::Input, true, &mut rng);
    let mut second = common::conv(1, 2, 2, 4, 3, 1, Source::Layer(0), true, &mut rng);
    second.weights = Tensor::zeros(second.desc.weight_shape());
    second.bias = Tensor::zeros(vec![2]);
    let with_block = ModelGraph::new(
        [1, 4, 4],
        vec![stem.clone(), second],
        vec![Junction {
            producer: 0,
            consumer: 1,
        }],
    )
    .unwrap();
    let stem_only = ModelGraph::new([1, 4, 4], vec![stem], vec![]).unwrap();
    let x = Tensor::from_fn(vec![1, 4, 4], |i| (i as f32).sin());
    assert_eq!(
        model_forward(&with_block, &x).unwrap().data(),
        model_forward(&stem_only, &x).unwrap().data()
    );
}

#[test]
fn model_and_dataset_round_trip() {
    let model = common::toy_residual(2);
    let data = common::random_dataset(&model, 5, 3);
    let dir = tempfile::tempdir().unwrap();
    save_model(&model, dir.path().join("m")).unwrap();
    save_dataset(&data, dir.path().join("d")).unwrap();
    assert_eq!(load_model(dir.path().join("m")).unwrap(), model);
    let back = load_dataset(dir.path().join("d"), Some(model.num_classes), Split::TrainCalib).unwrap();
    assert_eq!(back.labels(), data.labels());
    assert_eq!(back.inputs(), data.inputs());
}

#[test]
fn corrupted_blob_is_rejected() {
    let model = common::toy_residual(4);
    let dir = tempfile::tempdir().unwrap();
    save_model(&model, dir.path()).unwrap();
    let blob = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|x| x == "bin"))
        .unwrap();
    let mut bytes = std::fs::read(&blob).unwrap();
    bytes[0] ^= 0xFF;
    std::fs::write(&blob, bytes).unwrap();
    assert!(load_model(dir.path()).is_err());
}

fn compressor(seed: u64) -> (Compressor, cforge::dataset::Dataset) {
    let model = common::toy_residual(seed);
    let calib = common::random_dataset(&model, 16, seed + 1);
    let cfg = CompressConfig {
        s_cap: 1.0,
        ..CompressConfig::default()
    };
    (Compressor::new(model, &calib, cfg).unwrap(), calib)
}

#[test]
fn structured_shortcut_mask_reaches_the_block_output() {
    let (comp, calib) = compressor(5);
    let mut plan = CompressionPlan::noop(4);
    plan.actions[0] = CompressionAction::new(0, Technique::L1Ranked, 0.5, 8).unwrap();
    let applied = comp.apply(&plan, 0).unwrap();
    assert_eq!(applied.resolved.actions[2].mirror, Some(0));
    assert_eq!(applied.achieved[2].mirrored_from, Some(0));
    let dead = applied.model.layers[0].dead_outputs.clone().unwrap();
    assert_eq!(dead.iter().filter(|&&d| d).count(), 4);
    assert_eq!(applied.model.layers[2].dead_outputs.as_ref(), Some(&dead));
    assert!(evaluate_accuracy(&applied.model, &calib).is_ok());
}

#[test]
fn consumer_mask_wins_over_a_structured_producer() {
    let (comp, _) = compressor(6);
    let mut plan = CompressionPlan::noop(4);
    plan.actions[0] = CompressionAction::new(0, Technique::Bernoulli, 0.25, 8).unwrap();
    plan.actions[2] = CompressionAction::new(2, Technique::L2Ranked, 0.75, 8).unwrap();
    let applied = comp.apply(&plan, 1).unwrap();
    assert_eq!(applied.resolved.actions[0].mirror, Some(2));
    let removed = &applied.masks[2].removed_units;
    assert_eq!(removed.len(), 6);
    assert_eq!(&applied.masks[0].removed_units, removed);
}

#[test]
fn element_pruning_keeps_shapes_and_hits_sparsity() {
    let (comp, _) = compressor(7);
    for t in [Technique::Level, Technique::Sensitivity, Technique::Splicing] {
        let plan = CompressionPlan::uniform(4, t, 0.5, 8);
        let applied = comp.apply(&plan, 0).unwrap();
        for (l, a) in applied.achieved.iter().enumerate() {
            assert_eq!(applied.model.layers[l].weights.shape(), comp.dense().layers[l].weights.shape());
            assert_eq!(a.granularity, Granularity::Element);
            assert!(applied.model.layers[l].dead_outputs.is_none());
            if t != Technique::Splicing {
                assert!((a.total_sparsity - 0.5).abs() < 0.01, "{t} layer {l}: {}", a.total_sparsity);
            }
        }
    }
}

#[test]
fn plans_are_one_shot_and_seeded() {
    let (comp, calib) = compressor(8);
    let plan = CompressionPlan::uniform(4, Technique::Bernoulli, 0.5, 4);
    let a = comp.apply(&plan, 3).unwrap();
    let b = comp.apply(&plan, 3).unwrap();
    assert_eq!(a.model, b.model);
    // a later plan starts from the dense weights again
    let noop = comp.apply(&CompressionPlan::noop(4), 3).unwrap();
    let dense_acc = evaluate_accuracy(comp.dense(), &calib).unwrap();
    let noop_acc = evaluate_accuracy(&noop.model, &calib).unwrap();
    assert!((dense_acc - noop_acc).abs() <= 0.125);
    assert!(noop.achieved.iter().all(|a| a.total_sparsity == 0.0));
}
