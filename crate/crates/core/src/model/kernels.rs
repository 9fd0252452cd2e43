//! Convolution and dense kernels, generic over the scalar so the same code
//! serves `f32` inference and the `f64` gradient path.

use ndarray::{Array2, ArrayView2, LinalgScalar};
use num_traits::Float;

pub trait Scalar: Float + LinalgScalar + Send + Sync + std::fmt::Debug {}
impl<T: Float + LinalgScalar + Send + Sync + std::fmt::Debug> Scalar for T {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub in_height: usize,
    pub in_width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.in_height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.in_width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }
}

/// Unfolds a `(C, H, W)` input into a `(C*k*k, H_out*W_out)` patch matrix.
pub fn im2col<T: Scalar>(input: &[T], g: &ConvGeometry) -> Array2<T> {
    let (oh, ow) = (g.out_height(), g.out_width());
    let k = g.kernel;
    let mut cols = Array2::<T>::zeros((g.patch_len(), oh * ow));
    let pad = g.padding as isize;
    for c in 0..g.in_channels {
        let plane = &input[c * g.in_height * g.in_width..(c + 1) * g.in_height * g.in_width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let mut dst = cols.row_mut(row);
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    if iy < 0 || iy >= g.in_height as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        if ix < 0 || ix >= g.in_width as isize {
                            continue;
                        }
                        dst[oy * ow + ox] = plane[iy as usize * g.in_width + ix as usize];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input plane.
pub fn col2im<T: Scalar>(cols: ArrayView2<T>, g: &ConvGeometry) -> Vec<T> {
    let (oh, ow) = (g.out_height(), g.out_width());
    let k = g.kernel;
    let mut out = vec![T::zero(); g.in_channels * g.in_height * g.in_width];
    let pad = g.padding as isize;
    for c in 0..g.in_channels {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = cols.row(row);
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    if iy < 0 || iy >= g.in_height as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        if ix < 0 || ix >= g.in_width as isize {
                            continue;
                        }
                        let idx = (c * g.in_height + iy as usize) * g.in_width + ix as usize;
                        out[idx] = out[idx] + src[oy * ow + ox];
                    }
                }
            }
        }
    }
    out
}

/// `weights` is `(C_o, C_in*k*k)`; returns `(C_o, H_out*W_out)` without bias.
pub fn conv2d_cols<T: Scalar>(weights: ArrayView2<T>, cols: ArrayView2<T>) -> Array2<T> {
    weights.dot(&cols)
}

/// `weights` is `(N, M)` row-major; `out = W x + b`.
pub fn dense<T: Scalar>(weights: &[T], bias: &[T], input: &[T], n: usize, m: usize) -> Vec<T> {
    (0..n)
        .map(|i| {
            let row = &weights[i * m..(i + 1) * m];
            row.iter()
                .zip(input)
                .fold(bias[i], |acc, (&w, &x)| acc + w * x)
        })
        .collect()
}
