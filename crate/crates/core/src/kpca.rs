//! Kernel PCA embeddings and the alignment difference between two of them.

use nalgebra::DMatrix;

use crate::linalg::symmetric_eigen;

use crate::{Error, Result};

/// Largest Gram order accepted by [`embed`].
pub const KPCA_CAP: usize = 8192;

/// Eigenvalues below `-NEG_TOL` are taken as evidence of an indefinite input.
const NEG_TOL: f64 = 1e-8;

/// Top-`q` kernel PCA embedding of a symmetric Gram matrix.
///
/// The Gram is double-centered, and column `j` of the result is
/// `√λ_j v_j` for the `j`-th largest eigenpair, with each `v_j` signed so
/// that its largest-magnitude entry is positive.
pub fn embed(gram: &DMatrix<f64>, q: usize) -> Result<DMatrix<f64>> {
    let n = gram.nrows();
    if gram.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: gram.ncols(),
        });
    }
    if n == 0 {
        return Err(Error::Empty);
    }
    if n > KPCA_CAP {
        return Err(Error::CapExceeded { n, cap: KPCA_CAP });
    }
    if q == 0 || q > n {
        return Err(Error::InvalidParameter(alloc::format!(
            "embedding dimension {q} must be in 1..={n}"
        )));
    }
    let centered = double_center(gram);
    let eig = symmetric_eigen(&centered);
    let mut order: alloc::vec::Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut out = DMatrix::zeros(n, q);
    for (j, &k) in order.iter().take(q).enumerate() {
        let lambda = eig.eigenvalues[k];
        if lambda < -NEG_TOL {
            return Err(Error::NotPsd(lambda));
        }
        let v = eig.eigenvectors.column(k);
        let pivot = v
            .iter()
            .copied()
            .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        let scale = sign * num_traits::Float::sqrt(lambda.max(0.0));
        out.column_mut(j).copy_from(&(v * scale));
    }
    Ok(out)
}

/// `H K H` with `H = I − 11ᵀ/n`.
pub fn double_center(gram: &DMatrix<f64>) -> DMatrix<f64> {
    let n = gram.nrows();
    let nf = n as f64;
    let row_means: alloc::vec::Vec<f64> = (0..n).map(|i| gram.row(i).sum() / nf).collect();
    let col_means: alloc::vec::Vec<f64> = (0..n).map(|j| gram.column(j).sum() / nf).collect();
    let total = row_means.iter().sum::<f64>() / nf;
    DMatrix::from_fn(n, n, |i, j| gram[(i, j)] - row_means[i] - col_means[j] + total)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Alignment {
    /// `‖U − Ũ M‖_F / ‖U‖_F` for the least-squares `M`.
    pub value: f64,
    /// Set when `Ũ` lacks full column rank; `M` is then the minimum-norm
    /// solution.
    pub rank_deficient: bool,
}

/// Residual of aligning `u_tilde` to `u` by the best linear map.
pub fn alignment(u: &DMatrix<f64>, u_tilde: &DMatrix<f64>) -> Result<Alignment> {
    if u.shape() != u_tilde.shape() {
        return Err(Error::DimensionMismatch {
            expected: u.nrows() * u.ncols(),
            found: u_tilde.nrows() * u_tilde.ncols(),
        });
    }
    let norm = u.norm();
    if norm == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let svd = u_tilde.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = f64::EPSILON * (u.nrows().max(u.ncols()) as f64) * smax;
    let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();
    let m = svd
        .solve(u, eps)
        .map_err(|e| Error::InvalidParameter(alloc::string::ToString::to_string(e)))?;
    let residual = u - u_tilde * m;
    Ok(Alignment {
        value: residual.norm() / norm,
        rank_deficient: rank < u.ncols() || smax == 0.0,
    })
}

pub fn alignment_diff(u: &DMatrix<f64>, u_tilde: &DMatrix<f64>) -> Result<f64> {
    alignment(u, u_tilde).map(|a| a.value)
}
