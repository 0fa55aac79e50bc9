//! Base kernels and cross-Gram evaluation.
//!
//! Every kernel here is stationary and strictly positive-definite. The
//! jittered kernel `k'(x, x') = k(x, x') + λ'·δ` adds the jitter only when
//! the two arguments are the *same training point*: δ is keyed on point
//! identity (training index), never on coordinate equality.

use core::fmt;

use nalgebra::{DMatrix, DVector};
use num_traits::Float;

use crate::{Error, PointSet, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum KernelFamily {
    /// `exp(-‖x - x'‖₂² / (2σ²))`
    Gaussian,
    /// `exp(-‖x - x'‖₁ / σ)`
    Laplace,
    /// `σ² / sqrt(‖x - x'‖₂² + σ²)`, unnormalized; its self-value is `σ`.
    InverseMultiquadric,
}

impl KernelFamily {
    pub const ALL: [KernelFamily; 3] = [
        KernelFamily::Gaussian,
        KernelFamily::Laplace,
        KernelFamily::InverseMultiquadric,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Gaussian => "gaussian",
            KernelFamily::Laplace => "laplace",
            KernelFamily::InverseMultiquadric => "invmq",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "gaussian" => Some(KernelFamily::Gaussian),
            "laplace" => Some(KernelFamily::Laplace),
            "invmq" | "inv_multiquadric" => Some(KernelFamily::InverseMultiquadric),
            _ => None,
        }
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Base kernel family, range parameter and diagonal jitter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelSpec {
    family: KernelFamily,
    sigma: f64,
    jitter: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, sigma: f64, jitter: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(alloc::format!(
                "sigma must be positive and finite, got {sigma}"
            )));
        }
        if !(jitter >= 0.0 && jitter.is_finite()) {
            return Err(Error::InvalidParameter(alloc::format!(
                "jitter must be nonnegative and finite, got {jitter}"
            )));
        }
        Ok(Self { family, sigma, jitter })
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Same family and σ with a different jitter.
    pub fn with_jitter(&self, jitter: f64) -> Result<Self> {
        Self::new(self.family, self.sigma, jitter)
    }

    /// `k(x, x)` without jitter.
    pub fn peak(&self) -> f64 {
        match self.family {
            KernelFamily::Gaussian | KernelFamily::Laplace => 1.0,
            KernelFamily::InverseMultiquadric => self.sigma,
        }
    }

    /// Unjittered `k(x, y)`. Lengths must agree (checked in debug builds).
    #[inline]
    pub fn base(&self, x: &[f64], y: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), y.len());
        match self.family {
            KernelFamily::Gaussian => {
                let s = sq_dist(x, y);
                Float::exp(-s / (2.0 * self.sigma * self.sigma))
            }
            KernelFamily::Laplace => {
                let s: f64 = x.iter().zip(y).map(|(a, b)| Float::abs(a - b)).sum();
                Float::exp(-s / self.sigma)
            }
            KernelFamily::InverseMultiquadric => {
                let s2 = self.sigma * self.sigma;
                s2 / Float::sqrt(sq_dist(x, y) + s2)
            }
        }
    }

    /// `k'(x, y)`: the base kernel plus jitter when `same_identity`.
    #[inline]
    pub fn jittered(&self, x: &[f64], y: &[f64], same_identity: bool) -> f64 {
        let v = self.base(x, y);
        if same_identity {
            v + self.jitter
        } else {
            v
        }
    }
}

// Accumulated as a sum of squared differences rather than through dot
// products, which cancels badly for nearby points.
#[inline]
fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| {
            let d = a - b;
            d * d
        })
        .sum()
}

/// `k'(x, x')`, with the jitter applied iff `same_identity`.
pub fn kernel_eval(spec: &KernelSpec, x: &[f64], y: &[f64], same_identity: bool) -> Result<f64> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    Ok(spec.jittered(x, y, same_identity))
}

/// `K'(Y, Z)` for arbitrary point sets.
///
/// `identity`, when given, carries a training index per row of `Y` and per
/// row of `Z`; the jitter is added where the two indices agree.
pub fn kernel_cross(
    spec: &KernelSpec,
    y: &PointSet,
    z: &PointSet,
    identity: Option<(&[usize], &[usize])>,
) -> Result<DMatrix<f64>> {
    if y.dim() != z.dim() {
        return Err(Error::DimensionMismatch {
            expected: y.dim(),
            found: z.dim(),
        });
    }
    if let Some((iy, iz)) = identity {
        if iy.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: y.len(),
                found: iy.len(),
            });
        }
        if iz.len() != z.len() {
            return Err(Error::DimensionMismatch {
                expected: z.len(),
                found: iz.len(),
            });
        }
    }
    Ok(DMatrix::from_fn(y.len(), z.len(), |i, j| {
        let same = identity.is_some_and(|(iy, iz)| iy[i] == iz[j]);
        spec.jittered(y.row(i), z.row(j), same)
    }))
}

/// `K'(X_rows, X_cols)` for two index lists into one training set; the
/// jitter lands wherever a row index equals a column index.
pub fn kernel_block(spec: &KernelSpec, points: &PointSet, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| {
        spec.jittered(points.row(rows[i]), points.row(cols[j]), rows[i] == cols[j])
    })
}

/// Symmetric `K'(X_idx, X_idx)`: the upper triangle is evaluated and
/// mirrored, so the result is symmetric bit for bit.
pub fn kernel_gram(spec: &KernelSpec, points: &PointSet, idx: &[usize]) -> DMatrix<f64> {
    let m = idx.len();
    let mut g = DMatrix::zeros(m, m);
    for j in 0..m {
        let xj = points.row(idx[j]);
        for i in 0..=j {
            let v = spec.jittered(points.row(idx[i]), xj, idx[i] == idx[j]);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

/// `k(X_idx, x)` for a point outside the training set (no jitter).
pub fn kernel_column(spec: &KernelSpec, points: &PointSet, idx: &[usize], x: &[f64]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |i, _| spec.base(points.row(idx[i]), x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn spec(family: KernelFamily, sigma: f64, jitter: f64) -> KernelSpec {
        KernelSpec::new(family, sigma, jitter).unwrap()
    }

    #[test]
    fn gaussian_values() {
        let s = spec(KernelFamily::Gaussian, 1.0, 0.0);
        assert_eq!(kernel_eval(&s, &[0.3, -1.0], &[0.3, -1.0], true).unwrap(), 1.0);
        // ‖x - x'‖² = 2
        let v = kernel_eval(&s, &[0.0, 0.0], &[1.0, 1.0], false).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        assert!((v - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn laplace_and_invmq_values() {
        let s = spec(KernelFamily::Laplace, 2.0, 0.0);
        let v = kernel_eval(&s, &[0.0, 0.0], &[1.0, -1.0], false).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);

        let s = spec(KernelFamily::InverseMultiquadric, 1.0, 0.0);
        assert_eq!(kernel_eval(&s, &[2.0], &[2.0], false).unwrap(), 1.0);
        let s = spec(KernelFamily::InverseMultiquadric, 3.0, 0.0);
        assert_eq!(kernel_eval(&s, &[2.0], &[2.0], false).unwrap(), 3.0);
        assert_eq!(s.peak(), 3.0);
    }

    #[test]
    fn jitter_follows_identity() {
        let s = spec(KernelFamily::Gaussian, 0.5, 0.25);
        assert_eq!(kernel_eval(&s, &[1.0], &[1.0], true).unwrap(), 1.25);
        assert_eq!(kernel_eval(&s, &[1.0], &[1.0], false).unwrap(), 1.0);
    }

    #[test]
    fn dimension_mismatch() {
        let s = spec(KernelFamily::Gaussian, 1.0, 0.0);
        assert!(matches!(
            kernel_eval(&s, &[1.0, 2.0], &[1.0], false),
            Err(Error::DimensionMismatch { .. })
        ));
        let y = PointSet::new(2, vec![0.0; 4]).unwrap();
        let z = PointSet::new(3, vec![0.0; 3]).unwrap();
        assert!(kernel_cross(&s, &y, &z, None).is_err());
    }

    #[test]
    fn invalid_parameters() {
        assert!(KernelSpec::new(KernelFamily::Gaussian, 0.0, 0.0).is_err());
        assert!(KernelSpec::new(KernelFamily::Gaussian, 1.0, -1e-3).is_err());
        assert!(KernelSpec::new(KernelFamily::Gaussian, f64::NAN, 0.0).is_err());
    }

    #[test]
    fn single_point_cross_with_identity() {
        let s = spec(KernelFamily::Gaussian, 3.7, 0.1);
        let y = PointSet::new(2, vec![0.2, 0.4]).unwrap();
        let k = kernel_cross(&s, &y, &y, Some((&[0], &[0]))).unwrap();
        assert_eq!(k[(0, 0)], 1.1);
    }

    #[test]
    fn duplicate_coordinates_do_not_couple() {
        let s = spec(KernelFamily::Gaussian, 1.0, 0.01);
        let y = PointSet::new(2, vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        let k = kernel_cross(&s, &y, &y, Some((&[0, 1], &[0, 1]))).unwrap();
        assert_eq!(k[(0, 1)], 1.0);
        assert_eq!(k[(1, 0)], 1.0);
        assert_eq!(k[(0, 0)], 1.01);
        assert_eq!(k[(1, 1)], 1.01);
    }

    #[test]
    fn cross_matches_double_loop() {
        let s = spec(KernelFamily::Gaussian, 0.7, 0.0);
        let y = PointSet::new(2, vec![0.1, -0.3, 0.8, 0.2, -0.5, 0.9]).unwrap();
        let z = PointSet::new(2, vec![0.0, 0.4, -0.7, -0.1]).unwrap();
        let k = kernel_cross(&s, &y, &z, None).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let (a, b) = (y.row(i), z.row(j));
                let d2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
                let expect = (-d2 / (2.0 * 0.49)).exp();
                assert!((k[(i, j)] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn gram_is_exactly_symmetric_and_matches_block() {
        let s = spec(KernelFamily::Laplace, 0.9, 1e-3);
        let data: alloc::vec::Vec<f64> = (0..30).map(|i| ((i * 37 % 11) as f64) / 7.0 - 0.6).collect();
        let p = PointSet::new(3, data).unwrap();
        let idx = [4usize, 1, 7, 9, 0];
        let g = kernel_gram(&s, &p, &idx);
        assert_eq!(g, g.transpose());
        assert_eq!(g, kernel_block(&s, &p, &idx, &idx));
        let col = kernel_column(&s, &p, &idx, p.row(1));
        // no jitter for an out-of-sample query, even at a training location
        assert_eq!(col[1], 1.0);
    }
}
