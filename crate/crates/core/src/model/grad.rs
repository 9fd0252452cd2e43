//! Reverse-mode gradients of the mean softmax cross-entropy loss with respect
//! to every layer's weights. Runs in `f64` so finite-difference checks can be
//! held to tight tolerances.

use ndarray::{Array2, ArrayView2};

use super::forward::{forward_trace, Params};
use super::kernels;
use super::{InputTransform, LayerKind, ModelGraph, Source};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn widen(model: &ModelGraph) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let w = model
        .layers
        .iter()
        .map(|l| l.weights.data().iter().map(|&v| v as f64).collect())
        .collect();
    let b = model
        .layers
        .iter()
        .map(|l| l.bias.data().iter().map(|&v| v as f64).collect())
        .collect();
    (w, b)
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Mean cross-entropy of the model evaluated with `weights` in place of the
/// stored ones (biases are taken from the model).
pub fn mean_cross_entropy_f64(
    model: &ModelGraph,
    weights: &[Vec<f64>],
    batch: &Dataset,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (_, biases) = widen(model);
    let params = Params {
        weights: weights.iter().map(|w| w.as_slice()).collect(),
        biases: biases.iter().map(|b| b.as_slice()).collect(),
    };
    let mut total = 0.0;
    for i in 0..batch.len() {
        let x: Vec<f64> = batch.sample(i).iter().map(|&v| v as f64).collect();
        let trace = forward_trace(model, &params, &x, false)?;
        let p = softmax(trace.outputs.last().unwrap());
        total -= p[batch.labels()[i] as usize].ln();
    }
    Ok(total / batch.len() as f64)
}

/// `d loss / d W` for every layer, in `f64`. `weights` overrides the stored
/// weights when given.
pub fn loss_gradients_f64(
    model: &ModelGraph,
    weights: Option<&[Vec<f64>]>,
    batch: &Dataset,
) -> Result<Vec<Vec<f64>>> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (wide_w, biases) = widen(model);
    let weights = weights.unwrap_or(&wide_w);
    let params = Params {
        weights: weights.iter().map(|w| w.as_slice()).collect(),
        biases: biases.iter().map(|b| b.as_slice()).collect(),
    };
    let n = model.num_layers();
    let mut grads: Vec<Vec<f64>> = model
        .layers
        .iter()
        .map(|l| vec![0.0; l.desc.param_count()])
        .collect();
    let scale = 1.0 / batch.len() as f64;

    for s in 0..batch.len() {
        let x: Vec<f64> = batch.sample(s).iter().map(|&v| v as f64).collect();
        let trace = forward_trace(model, &params, &x, true)?;
        let mut d_out: Vec<Vec<f64>> = trace.outputs.iter().map(|o| vec![0.0; o.len()]).collect();
        let p = softmax(&trace.outputs[n - 1]);
        let label = batch.labels()[s] as usize;
        for (k, d) in d_out[n - 1].iter_mut().enumerate() {
            *d = (p[k] - if k == label { 1.0 } else { 0.0 }) * scale;
        }

        for i in (0..n).rev() {
            let layer = &model.layers[i];
            let desc = &layer.desc;
            let mut g = std::mem::take(&mut d_out[i]);
            if layer.relu {
                for (gv, &o) in g.iter_mut().zip(&trace.outputs[i]) {
                    if o <= 0.0 {
                        *gv = 0.0;
                    }
                }
            }
            if let Some(j) = model.junction_into(i) {
                for (d, &gv) in d_out[j.producer].iter_mut().zip(&g) {
                    *d += gv;
                }
            }
            if let Some(dead) = &layer.dead_outputs {
                let hw = g.len() / desc.out_channels;
                for (c, chunk) in g.chunks_mut(hw).enumerate() {
                    if dead[c] {
                        chunk.fill(0.0);
                    }
                }
            }
            let xin = &trace.inputs[i];
            let d_in: Vec<f64> = match desc.kind {
                LayerKind::Conv => {
                    let geo = desc.geometry();
                    let hw = geo.out_height() * geo.out_width();
                    let cols = kernels::im2col(xin, &geo);
                    let gy = ArrayView2::from_shape((desc.out_channels, hw), &g).unwrap();
                    let dw: Array2<f64> = gy.dot(&cols.t());
                    for (acc, v) in grads[i].iter_mut().zip(dw.iter()) {
                        *acc += v;
                    }
                    if layer.source == Source::Input {
                        continue;
                    }
                    let wv =
                        ArrayView2::from_shape((desc.out_channels, geo.patch_len()), params.weights[i])
                            .unwrap();
                    let dcols = wv.t().dot(&gy);
                    kernels::col2im(dcols.view(), &geo)
                }
                LayerKind::Fc => {
                    let (nn, m) = (desc.out_channels, desc.in_channels);
                    for r in 0..nn {
                        if g[r] == 0.0 {
                            continue;
                        }
                        let row = &mut grads[i][r * m..(r + 1) * m];
                        for (acc, &xv) in row.iter_mut().zip(xin) {
                            *acc += g[r] * xv;
                        }
                    }
                    if layer.source == Source::Input {
                        continue;
                    }
                    let w = params.weights[i];
                    let mut dx = vec![0.0; m];
                    for r in 0..nn {
                        let row = &w[r * m..(r + 1) * m];
                        for (d, &wv) in dx.iter_mut().zip(row) {
                            *d += g[r] * wv;
                        }
                    }
                    dx
                }
            };
            if let Source::Layer(j) = layer.source {
                let target = &mut d_out[j];
                match layer.transform {
                    InputTransform::GlobalAvgPool => {
                        let hw = target.len() / d_in.len();
                        let inv = 1.0 / hw as f64;
                        for (c, &dv) in d_in.iter().enumerate() {
                            for t in &mut target[c * hw..(c + 1) * hw] {
                                *t += dv * inv;
                            }
                        }
                    }
                    InputTransform::Identity | InputTransform::Flatten => {
                        for (t, &dv) in target.iter_mut().zip(&d_in) {
                            *t += dv;
                        }
                    }
                }
            }
        }
    }
    Ok(grads)
}

/// Per-layer weight gradients of the mean cross-entropy over `batch`.
pub fn loss_gradients(model: &ModelGraph, batch: &Dataset) -> Result<Vec<Tensor>> {
    let g = loss_gradients_f64(model, None, batch)?;
    model
        .layers
        .iter()
        .zip(g)
        .map(|(l, g)| Tensor::new(l.desc.weight_shape(), g.into_iter().map(|v| v as f32).collect()))
        .collect()
}
