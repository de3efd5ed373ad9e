//! Thin Cholesky helpers over the LAPACK factorization.
//!
//! Everything downstream needs the same four things from an SPD matrix:
//! a factor, solves against it, its inverse, and its log determinant.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use ndarray_linalg::{Cholesky, UPLO};

use crate::error::{numerical, Result};

/// Lower Cholesky factor of an SPD matrix; failure carries a condition hint.
pub(crate) fn cholesky_lower(a: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    a.cholesky(UPLO::Lower).map_err(|e| {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..n {
            lo = lo.min(a[[i, i]]);
            hi = hi.max(a[[i, i]]);
        }
        numerical(format!(
            "Cholesky factorization failed ({e}); diagonal range [{lo:.3e}, {hi:.3e}]"
        ))
    })
}

/// Solves L z = b in place.
pub(crate) fn solve_lower(l: &Array2<f64>, b: &mut Array1<f64>) {
    let n = l.nrows();
    for i in 0..n {
        let mut s = b[i];
        for j in 0..i {
            s -= l[[i, j]] * b[j];
        }
        b[i] = s / l[[i, i]];
    }
}

/// Solves L^T z = b in place.
pub(crate) fn solve_lower_transpose(l: &Array2<f64>, b: &mut Array1<f64>) {
    let n = l.nrows();
    for i in (0..n).rev() {
        let mut s = b[i];
        for j in (i + 1)..n {
            s -= l[[j, i]] * b[j];
        }
        b[i] = s / l[[i, i]];
    }
}

/// Solves (L L^T) x = b.
pub(crate) fn chol_solve(l: &Array2<f64>, b: ArrayView1<'_, f64>) -> Array1<f64> {
    let mut x = b.to_owned();
    solve_lower(l, &mut x);
    solve_lower_transpose(l, &mut x);
    x
}

/// Inverse of L L^T, column by column.
pub(crate) fn chol_inverse(l: &Array2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let mut inv = Array2::zeros((n, n));
    for j in 0..n {
        let mut e = Array1::zeros(n);
        e[j] = 1.0;
        solve_lower(l, &mut e);
        solve_lower_transpose(l, &mut e);
        inv.column_mut(j).assign(&e);
    }
    // Symmetrize away the round-off skew.
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (inv[[i, j]] + inv[[j, i]]);
            inv[[i, j]] = v;
            inv[[j, i]] = v;
        }
    }
    inv
}

/// ln det(L L^T) = 2 sum ln L_ii.
pub(crate) fn chol_logdet(l: &Array2<f64>) -> f64 {
    2.0 * l.diag().iter().map(|v| v.ln()).sum::<f64>()
}
