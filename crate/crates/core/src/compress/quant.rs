//! Per-output-channel asymmetric linear quantization of weights and
//! Laplace-clipped quantization of layer inputs. Everything is simulated in
//! floating point (quantize, then dequantize).

use serde::{Deserialize, Serialize};

use super::{MAX_BITS, MIN_BITS};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Clip multipliers for Laplace-distributed activations, `Q = 2..=8`.
pub const LAPLACE_LAMBDA: [f64; 7] = [2.83, 3.89, 5.03, 6.20, 7.41, 8.64, 9.89];

pub fn laplace_lambda(bits: u8) -> f64 {
    LAPLACE_LAMBDA[(bits.clamp(MIN_BITS, MAX_BITS) - MIN_BITS) as usize]
}

fn levels(bits: u8) -> f64 {
    ((1u32 << bits) - 1) as f64
}

fn check_bits(bits: u8) -> Result<()> {
    if (MIN_BITS..=MAX_BITS).contains(&bits) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "bit width {bits} outside [{MIN_BITS}, {MAX_BITS}]"
        )))
    }
}

/// Affine grid `offset + q * scale`, `q in 0..2^Q`. The offset is the
/// channel minimum itself rather than a rounded integer zero point, so both
/// range ends are representable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelQuant {
    pub bits: u8,
    pub scale: f64,
    pub offset: f64,
}

impl ChannelQuant {
    pub fn from_range(min: f64, max: f64, bits: u8) -> Self {
        if max > min {
            ChannelQuant {
                bits,
                scale: (max - min) / levels(bits),
                offset: min,
            }
        } else {
            ChannelQuant {
                bits,
                scale: 1.0,
                offset: min,
            }
        }
    }

    pub fn codebook_size(&self) -> usize {
        1 << self.bits
    }

    pub fn quantize(&self, x: f64) -> u32 {
        ((x - self.offset) / self.scale).round().clamp(0.0, levels(self.bits)) as u32
    }

    pub fn dequantize(&self, q: u32) -> f64 {
        self.offset + q as f64 * self.scale
    }

    pub fn fake_quantize(&self, x: f64) -> f64 {
        self.dequantize(self.quantize(x))
    }
}

/// Input quantizer of a layer: clip to `[lo, hi]`, then a uniform grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivationQuant {
    pub bits: u8,
    pub lo: f64,
    pub hi: f64,
    /// Clip half-width `lambda(Q) * b` around the calibration mean.
    pub alpha: f64,
}

impl ActivationQuant {
    /// Calibrates on sample values. Returns `None` for a degenerate
    /// (constant) distribution, which is left unquantized.
    pub fn calibrate(values: &[f32], bits: u8) -> Result<Option<Self>> {
        check_bits(bits)?;
        if values.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = values.len() as f64;
        let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
        let b = values.iter().map(|&v| (v as f64 - mean).abs()).sum::<f64>() / n;
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in values {
            min = min.min(v as f64);
            max = max.max(v as f64);
        }
        let alpha = laplace_lambda(bits) * b;
        let lo = min.max(mean - alpha);
        let hi = max.min(mean + alpha);
        if !(hi > lo) || alpha <= 0.0 {
            return Ok(None);
        }
        Ok(Some(ActivationQuant { bits, lo, hi, alpha }))
    }

    pub fn scale(&self) -> f64 {
        (self.hi - self.lo) / levels(self.bits)
    }

    pub fn fake_quantize(&self, x: f64) -> f64 {
        if !(self.hi > self.lo) {
            return x;
        }
        let s = self.scale();
        let q = ((x.clamp(self.lo, self.hi) - self.lo) / s).round();
        self.lo + q * s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub bits: u8,
    /// One entry per output channel; `None` when every weight of the channel
    /// is pruned.
    pub channels: Vec<Option<ChannelQuant>>,
    pub activation: Option<ActivationQuant>,
}

/// Quantizes the weights of one layer per output channel over the range of
/// its surviving (`keep`) weights. Pruned positions stay exactly zero.
/// Returns the parameters and the fake-quantized weights.
pub fn quantize_weights(weights: &Tensor, keep: Option<&[bool]>, bits: u8) -> Result<(Vec<Option<ChannelQuant>>, Tensor)> {
    check_bits(bits)?;
    let shape = weights.shape();
    let channels = shape.first().copied().unwrap_or(1).max(1);
    let per = weights.len() / channels;
    if let Some(k) = keep {
        if k.len() != weights.len() {
            return Err(Error::Shape(format!(
                "mask has {} entries for {} weights",
                k.len(),
                weights.len()
            )));
        }
    }
    let kept = |i: usize| keep.is_none_or(|k| k[i]);
    let mut out = weights.clone();
    let mut params = Vec::with_capacity(channels);
    let data = out.data_mut();
    for c in 0..channels {
        let range = c * per..(c + 1) * per;
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in range.clone().filter(|&i| kept(i)) {
            let v = data[i] as f64;
            min = min.min(v);
            max = max.max(v);
        }
        if min > max {
            data[range].fill(0.0);
            params.push(None);
            continue;
        }
        let q = ChannelQuant::from_range(min, max, bits);
        for i in range {
            data[i] = if kept(i) {
                q.fake_quantize(data[i] as f64) as f32
            } else {
                0.0
            };
        }
        params.push(Some(q));
    }
    Ok((params, out))
}

/// Quantizes a layer's weights and calibrates its input quantizer on
/// `activations_calib` (one flattened input per sample).
pub fn quantize_layer(
    weights: &Tensor,
    keep: Option<&[bool]>,
    activations_calib: &[Vec<f32>],
    bits: u8,
) -> Result<(QuantParams, Tensor)> {
    let (channels, out) = quantize_weights(weights, keep, bits)?;
    let flat: Vec<f32> = activations_calib.iter().flatten().copied().collect();
    let activation = ActivationQuant::calibrate(&flat, bits)?;
    Ok((
        QuantParams {
            bits,
            channels,
            activation,
        },
        out,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_bit_grid_hand_case() {
        let q = ChannelQuant::from_range(-1.0, 1.0, 2);
        let grid: Vec<f64> = (0..4).map(|i| q.dequantize(i)).collect();
        let expected = [-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0];
        for (g, e) in grid.iter().zip(expected) {
            assert!((g - e).abs() < 1e-12);
        }
        assert!((q.fake_quantize(0.5) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(q.codebook_size(), 4);
    }

    #[test]
    fn layer_levels_and_zero_preservation() {
        let w = Tensor::new(vec![2, 3], vec![-1.0, 0.5, 1.0, 0.2, 0.7, 0.0]).unwrap();
        let keep = [true, true, true, true, true, false];
        let (p, out) = quantize_weights(&w, Some(&keep), 2).unwrap();
        assert!((out.data()[1] - 1.0 / 3.0).abs() < 1e-6);
        assert_eq!(out.data()[5], 0.0);
        // second channel range is [0.2, 0.7] over kept weights only
        assert_eq!(p[1].unwrap().offset, 0.2f32 as f64);
    }

    #[test]
    fn constant_channel_unchanged() {
        let w = Tensor::new(vec![1, 4], vec![0.3; 4]).unwrap();
        let (p, out) = quantize_weights(&w, None, 3).unwrap();
        assert_eq!(out.data(), w.data());
        assert_eq!(p[0].unwrap().scale, 1.0);
    }

    #[test]
    fn eight_bit_grid_round_trip() {
        let w = Tensor::from_fn(vec![4, 27], |i| ((i * 37 % 101) as f32 / 50.0 - 1.0) * 0.3);
        let (_, once) = quantize_weights(&w, None, 8).unwrap();
        let (_, twice) = quantize_weights(&once, None, 8).unwrap();
        assert_eq!(once.data(), twice.data());
    }

    #[test]
    fn fully_pruned_channel_is_zero() {
        let w = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (p, out) = quantize_weights(&w, Some(&[false, false, true, true]), 4).unwrap();
        assert!(p[0].is_none());
        assert_eq!(&out.data()[..2], &[0.0, 0.0]);
    }

    #[test]
    fn activation_clip_hand_case() {
        // mean 0, b = 1 for values {-1, 1} repeated
        let v: Vec<f32> = (0..100).map(|i| if i % 2 == 0 { -1.0 } else { 1.0 }).collect();
        let a = ActivationQuant::calibrate(&v, 2).unwrap().unwrap();
        assert!((a.alpha - 2.83).abs() < 1e-12);
        assert_eq!((a.lo, a.hi), (-1.0, 1.0));
        let wide: Vec<f32> = (0..1000).map(|i| if i == 0 { 1000.0 } else { (i % 3) as f32 }).collect();
        let b = ActivationQuant::calibrate(&wide, 8).unwrap().unwrap();
        assert!(b.hi < 1000.0);
        assert_eq!(b.fake_quantize(1000.0), b.hi);
        assert!(ActivationQuant::calibrate(&[2.0; 10], 8).unwrap().is_none());
        assert!(ActivationQuant::calibrate(&[], 8).is_err());
    }

    #[test]
    fn rejects_out_of_range_bits() {
        let w = Tensor::zeros(vec![1, 1]);
        assert!(quantize_weights(&w, None, 1).is_err());
        assert!(quantize_weights(&w, None, 9).is_err());
    }

    proptest! {
        #[test]
        fn error_within_half_step(
            lo in -10.0f64..10.0, width in 1e-3f64..20.0, bits in 2u8..=8, t in 0.0f64..=1.0,
        ) {
            let q = ChannelQuant::from_range(lo, lo + width, bits);
            let x = lo + t * width;
            prop_assert!((x - q.fake_quantize(x)).abs() <= q.scale / 2.0 + 1e-12);
        }

        #[test]
        fn activation_output_on_grid(v in proptest::collection::vec(-3.0f32..3.0, 4..64), bits in 2u8..=8, x in -5.0f64..5.0) {
            if let Some(a) = ActivationQuant::calibrate(&v, bits).unwrap() {
                let y = a.fake_quantize(x);
                prop_assert!(y >= a.lo - 1e-12 && y <= a.hi + 1e-12);
                let k = (y - a.lo) / a.scale();
                prop_assert!((k - k.round()).abs() < 1e-6);
            }
        }
    }
}
