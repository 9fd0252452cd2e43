//! Minimum-norm least squares via SVD (nalgebra).

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LeastSquares {
    /// `(cols(A), k)` solution, one column per right-hand side.
    pub x: Array2<f64>,
    /// Numerical rank of `A`.
    pub rank: usize,
}

fn to_na(a: ArrayView2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

/// Solves `min ||A X - B||` column-wise, returning the minimum-norm solution.
/// An all-zero `A` yields `X = 0`.
pub fn least_squares_many(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<LeastSquares> {
    if a.nrows() == 0 {
        return Err(Error::InvalidArgument("least squares needs at least one row".into()));
    }
    if a.nrows() != b.nrows() {
        return Err(Error::Shape(format!(
            "A has {} rows, B has {}",
            a.nrows(),
            b.nrows()
        )));
    }
    let (rows, cols) = a.dim();
    if a.iter().all(|&v| v == 0.0) {
        return Ok(LeastSquares {
            x: Array2::zeros((cols, b.ncols())),
            rank: 0,
        });
    }
    let svd = to_na(a).svd(true, true);
    let smax = svd.singular_values.max();
    let eps = smax * f64::EPSILON * rows.max(cols) as f64;
    let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();
    let sol = svd
        .solve(&to_na(b), eps)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let x = Array2::from_shape_fn((cols, b.ncols()), |(i, j)| sol[(i, j)]);
    Ok(LeastSquares { x, rank })
}

/// `x` minimizing `||A x - b||_2`; the minimum-norm one when `A` is rank
/// deficient.
pub fn least_squares_solve(a: ArrayView2<f64>, b: ArrayView1<f64>) -> Result<Array1<f64>> {
    let bm = b.to_owned().insert_axis(ndarray::Axis(1));
    let s = least_squares_many(a, bm.view())?;
    Ok(s.x.column(0).to_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identity_returns_rhs() {
        let a = Array2::<f64>::eye(3);
        let b = array![1.0, -2.0, 0.5];
        let x = least_squares_solve(a.view(), b.view()).unwrap();
        for i in 0..3 {
            assert!((x[i] - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn overdetermined_average() {
        let a = array![[1.0], [1.0]];
        let b = array![1.0, 3.0];
        let x = least_squares_solve(a.view(), b.view()).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_matrix_gives_zero() {
        let a = Array2::<f64>::zeros((3, 2));
        let b = array![1.0, 2.0, 3.0];
        let x = least_squares_solve(a.view(), b.view()).unwrap();
        assert_eq!(x, array![0.0, 0.0]);
    }

    #[test]
    fn rank_deficient_is_min_norm() {
        // Two identical columns: any x1 + x2 = 2 fits, min norm is (1, 1).
        let a = array![[1.0, 1.0], [1.0, 1.0]];
        let b = array![2.0, 2.0];
        let x = least_squares_solve(a.view(), b.view()).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-10 && (x[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn empty_rows_rejected() {
        let a = Array2::<f64>::zeros((0, 2));
        let b = Array1::<f64>::zeros(0);
        assert!(least_squares_solve(a.view(), b.view()).is_err());
    }
}
