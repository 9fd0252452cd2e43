use ndarray::ArrayView2;

use super::kernels::{self, Scalar};
use super::{InputTransform, Layer, LayerKind, ModelGraph, Source};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-layer values recorded during a forward pass.
pub(crate) struct Trace<T> {
    /// What each layer consumed: source output after pooling and activation
    /// fake-quantization.
    pub inputs: Vec<Vec<T>>,
    /// Post-activation outputs.
    pub outputs: Vec<Vec<T>>,
}

pub(crate) struct Params<'a, T> {
    pub weights: Vec<&'a [T]>,
    pub biases: Vec<&'a [T]>,
}

impl<'a> Params<'a, f32> {
    pub fn of(model: &'a ModelGraph) -> Self {
        Params {
            weights: model.layers.iter().map(|l| l.weights.data()).collect(),
            biases: model.layers.iter().map(|l| l.bias.data()).collect(),
        }
    }
}

pub(crate) fn transform_input<T: Scalar>(layer: &Layer, src: &[T], src_shape: &[usize]) -> Vec<T> {
    match layer.transform {
        InputTransform::GlobalAvgPool => {
            let c = src_shape[0];
            let hw: usize = src_shape[1..].iter().product();
            let inv = T::from(hw).unwrap().recip();
            (0..c)
                .map(|ch| {
                    src[ch * hw..(ch + 1) * hw]
                        .iter()
                        .fold(T::zero(), |a, &v| a + v)
                        * inv
                })
                .collect()
        }
        InputTransform::Identity | InputTransform::Flatten => src.to_vec(),
    }
}

/// Conv or fc without activation, junction, or dead-unit handling.
pub(crate) fn layer_linear<T: Scalar>(layer: &Layer, w: &[T], b: &[T], x: &[T]) -> Vec<T> {
    let d = &layer.desc;
    match d.kind {
        LayerKind::Conv => {
            let g = d.geometry();
            let cols = kernels::im2col(x, &g);
            let wv = ArrayView2::from_shape((d.out_channels, g.patch_len()), w).unwrap();
            let y = kernels::conv2d_cols(wv, cols.view());
            let hw = g.out_height() * g.out_width();
            let mut out = y.into_raw_vec_and_offset().0;
            for (c, chunk) in out.chunks_mut(hw).enumerate() {
                for v in chunk {
                    *v = *v + b[c];
                }
            }
            out
        }
        LayerKind::Fc => kernels::dense(w, b, x, d.out_channels, d.in_channels),
    }
}

pub(crate) fn forward_trace<T: Scalar>(
    model: &ModelGraph,
    params: &Params<'_, T>,
    input: &[T],
    keep_inputs: bool,
) -> Result<Trace<T>> {
    let expected: usize = model.input_shape.iter().product();
    if input.len() != expected {
        return Err(Error::Shape(format!(
            "model input needs {} values ({:?}), got {}",
            expected,
            model.input_shape,
            input.len()
        )));
    }
    let n = model.layers.len();
    let mut outputs: Vec<Vec<T>> = Vec::with_capacity(n);
    let mut inputs = Vec::with_capacity(if keep_inputs { n } else { 0 });
    for (i, layer) in model.layers.iter().enumerate() {
        let (src, src_shape): (&[T], Vec<usize>) = match layer.source {
            Source::Input => (input, model.input_shape.to_vec()),
            Source::Layer(j) => (&outputs[j], model.layers[j].desc.output_shape()),
        };
        let mut x = transform_input(layer, src, &src_shape);
        if let Some(q) = &layer.input_quant {
            for v in x.iter_mut() {
                *v = T::from(q.fake_quantize(v.to_f64().unwrap())).unwrap();
            }
        }
        let mut y = layer_linear(layer, params.weights[i], params.biases[i], &x);
        if let Some(dead) = &layer.dead_outputs {
            let hw = y.len() / layer.desc.out_channels;
            for (c, chunk) in y.chunks_mut(hw).enumerate() {
                if dead[c] {
                    chunk.fill(T::zero());
                }
            }
        }
        if let Some(j) = model.junction_into(i) {
            let other = &outputs[j.producer];
            if other.len() != y.len() {
                return Err(Error::Shape(format!(
                    "junction {} -> {} adds {} to {} values",
                    j.producer,
                    i,
                    other.len(),
                    y.len()
                )));
            }
            for (a, &s) in y.iter_mut().zip(other) {
                *a = *a + s;
            }
        }
        if layer.relu {
            for v in y.iter_mut() {
                if *v < T::zero() {
                    *v = T::zero();
                }
            }
        }
        if keep_inputs {
            inputs.push(x);
        }
        outputs.push(y);
    }
    Ok(Trace { inputs, outputs })
}

pub fn conv2d_forward(input: &Tensor, layer: &Layer) -> Result<Tensor> {
    let d = &layer.desc;
    if d.kind != LayerKind::Conv {
        return Err(Error::InvalidArgument(format!("layer {} is not a conv layer", d.index)));
    }
    if input.shape() != d.input_shape().as_slice() {
        return Err(Error::Shape(format!(
            "conv layer {} expects input {:?}, got {:?}",
            d.index,
            d.input_shape(),
            input.shape()
        )));
    }
    let y = layer_linear(layer, layer.weights.data(), layer.bias.data(), input.data());
    Tensor::new(d.output_shape(), y)
}

pub fn fc_forward(input: &Tensor, layer: &Layer) -> Result<Tensor> {
    let d = &layer.desc;
    if d.kind != LayerKind::Fc {
        return Err(Error::InvalidArgument(format!("layer {} is not an fc layer", d.index)));
    }
    if input.len() != d.in_channels {
        return Err(Error::Shape(format!(
            "fc layer {} expects {} inputs, got {}",
            d.index,
            d.in_channels,
            input.len()
        )));
    }
    let y = layer_linear(layer, layer.weights.data(), layer.bias.data(), input.data());
    Tensor::new(vec![d.out_channels], y)
}

/// Class logits for one sample.
pub fn model_forward(model: &ModelGraph, input: &Tensor) -> Result<Tensor> {
    let trace = forward_trace(model, &Params::of(model), input.data(), false)?;
    let logits = trace.outputs.into_iter().last().unwrap_or_default();
    Tensor::new(vec![logits.len()], logits)
}

/// Top-1 accuracy of `model` (dense or compressed) on `data`.
pub fn evaluate_accuracy(model: &ModelGraph, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let params = Params::of(model);
    let mut correct = 0usize;
    for i in 0..data.len() {
        let trace = forward_trace(model, &params, data.sample(i), false)?;
        let logits = trace.outputs.last().unwrap();
        let mut best = 0;
        for (k, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = k;
            }
        }
        if best == data.labels()[i] as usize {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Inputs seen by every layer for a set of samples, indexed `[layer][sample]`.
#[derive(Debug, Clone)]
pub struct LayerActivations {
    pub per_layer: Vec<Vec<Vec<f32>>>,
}

impl LayerActivations {
    pub fn collect(model: &ModelGraph, data: &Dataset) -> Result<Self> {
        let params = Params::of(model);
        let mut per_layer = vec![Vec::with_capacity(data.len()); model.num_layers()];
        for i in 0..data.len() {
            let trace = forward_trace(model, &params, data.sample(i), true)?;
            for (l, x) in trace.inputs.into_iter().enumerate() {
                per_layer[l].push(x);
            }
        }
        Ok(LayerActivations { per_layer })
    }

    pub fn num_samples(&self) -> usize {
        self.per_layer.first().map_or(0, |v| v.len())
    }
}
