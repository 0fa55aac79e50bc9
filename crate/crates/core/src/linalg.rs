//! Small dense helpers shared by the structured solvers.
//!
//! Products of the form `K⁻¹·B` always go through a Cholesky factor and
//! triangular solves; no explicit inverse of a kernel Gram is formed.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

/// Cholesky factor `G = L Lᵀ` of a symmetric positive-definite matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SpdFactor {
    lower: DMatrix<f64>,
}

impl SpdFactor {
    /// Returns `None` when `g` is not numerically positive-definite.
    pub fn new(g: DMatrix<f64>) -> Option<Self> {
        if g.nrows() != g.ncols() {
            return None;
        }
        if g.nrows() == 0 {
            return Some(Self { lower: g });
        }
        let chol: Cholesky<f64, Dyn> = Cholesky::new(g)?;
        let lower = chol.unpack();
        if lower.diagonal().iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return None;
        }
        Some(Self { lower })
    }

    /// Wraps an already computed lower-triangular factor.
    pub fn from_lower(lower: DMatrix<f64>) -> Option<Self> {
        if lower.nrows() != lower.ncols() {
            return None;
        }
        Some(Self { lower })
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    /// Overwrites `b` with `G⁻¹ b`.
    pub fn solve_mut(&self, b: &mut DMatrix<f64>) {
        if self.dim() == 0 {
            return;
        }
        self.lower.solve_lower_triangular_unchecked_mut(b);
        self.lower.tr_solve_lower_triangular_unchecked_mut(b);
    }

    pub fn solve_vec_mut(&self, b: &mut DVector<f64>) {
        if self.dim() == 0 {
            return;
        }
        self.lower.solve_lower_triangular_unchecked_mut(b);
        self.lower.tr_solve_lower_triangular_unchecked_mut(b);
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.solve_vec_mut(&mut x);
        x
    }

    /// Overwrites `b` with `L⁻¹ b` (half solve, used for feature maps).
    pub fn half_solve_mut(&self, b: &mut DMatrix<f64>) {
        if self.dim() == 0 {
            return;
        }
        self.lower.solve_lower_triangular_unchecked_mut(b);
    }

    pub fn half_solve_vec_mut(&self, b: &mut DVector<f64>) {
        if self.dim() == 0 {
            return;
        }
        self.lower.solve_lower_triangular_unchecked_mut(b);
    }

    /// `G⁻¹` as a dense matrix, for blocks that are stored explicitly.
    pub fn inverse(&self) -> DMatrix<f64> {
        let mut inv = DMatrix::identity(self.dim(), self.dim());
        self.solve_mut(&mut inv);
        symmetrize(&mut inv);
        inv
    }
}

/// Replaces `m` by `(m + mᵀ) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    for j in 0..n {
        for i in 0..j {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Eigendecomposition of a symmetric matrix, reading both triangles.
///
/// nalgebra's implicit QR iteration decides deflation relative to the
/// neighbouring diagonal entries, so a cluster of exactly zero eigenvalues
/// never deflates and the off-diagonal decays into subnormals and NaN. The
/// decomposition is therefore taken of `m + cI` with `c` twice the
/// ∞-norm, which keeps every shifted eigenvalue at least `c/2` away from
/// zero; the shift is then removed. Eigenvectors are unaffected and the
/// absolute eigenvalue error stays a small multiple of `ε‖m‖`.
pub fn symmetric_eigen(m: &DMatrix<f64>) -> SymmetricEigen<f64, Dyn> {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    let mut a = m.clone();
    symmetrize(&mut a);
    let c = 2.0
        * (0..n)
            .map(|i| a.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
    for i in 0..n {
        a[(i, i)] += c;
    }
    let mut eig = SymmetricEigen::new(a);
    eig.eigenvalues.iter_mut().for_each(|v| *v -= c);
    eig
}

/// Eigenvalues of a symmetric matrix; see [`symmetric_eigen`].
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    symmetric_eigen(m).eigenvalues
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve_and_inverse() {
        let g = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let f = SpdFactor::new(g.clone()).unwrap();
        let b = DVector::from_vec(alloc::vec![1.0, -2.0, 0.5]);
        let x = f.solve_vec(&b);
        assert!((&g * &x - &b).amax() < 1e-14);
        let inv = f.inverse();
        assert!((&g * &inv - DMatrix::identity(3, 3)).amax() < 1e-14);
        assert_eq!(inv, inv.transpose());
    }

    #[test]
    fn rejects_indefinite() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(SpdFactor::new(g).is_none());
    }

    #[test]
    fn eigen_of_scattered_low_rank_block() {
        // A rank-2 block spread over a mostly zero matrix; the unshifted
        // QR iteration returns NaN here.
        let a = [
            1.1523558269459269,
            -1.0583465420333202,
            0.3325218365286703,
            -1.0583465420333202,
            0.9791152703810497,
            -0.2628461305739469,
            0.3325218365286703,
            -0.2628461305739469,
            0.3506218064916979,
        ];
        let idx = [1, 15, 14];
        let mut m = DMatrix::zeros(21, 21);
        for (i, &p) in idx.iter().enumerate() {
            for (j, &q) in idx.iter().enumerate() {
                m[(p, q)] = a[3 * i + j];
            }
        }
        let eig = symmetric_eigen(&m);
        assert!(eig.eigenvalues.iter().all(|v| v.is_finite()));
        let mut sorted: alloc::vec::Vec<f64> = eig.eigenvalues.iter().copied().collect();
        sorted.sort_by(f64::total_cmp);
        assert!(sorted[..19].iter().all(|v| v.abs() <= 1e-14));
        let trace: f64 = a[0] + a[4] + a[8];
        assert!((sorted[19] + sorted[20] - trace).abs() <= 1e-13);
        assert!((eig.recompose() - &m).amax() <= 1e-13);
    }
}
