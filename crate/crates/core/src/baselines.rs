//! Baseline approximate kernels: Nyström, random Fourier features, and the
//! block-independent kernel over the leaves of a partitioning tree.

use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, Distribution, Normal, Uniform};

use crate::kernels::{kernel_block, kernel_column, kernel_gram, KernelFamily, KernelSpec};
use crate::linalg::SpdFactor;
use crate::partition::PartitionTree;
use crate::{Error, PointSet, Result, DENSE_CAP};

/// `r` distinct indices drawn uniformly from `0..n`.
pub fn sample_landmarks(n: usize, r: usize, seed: u64) -> Result<Vec<usize>> {
    if r == 0 || r > n {
        return Err(Error::InvalidParameter(alloc::format!(
            "landmark count {r} must be in 1..={n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, n, r).into_vec())
}

/// Nyström feature map `φ(x) = L⁻¹ k(L_set, x)`, where `L Lᵀ = K'(L_set, L_set)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NystromMap {
    spec: KernelSpec,
    landmarks: PointSet,
    indices: Vec<usize>,
    factor: SpdFactor,
}

impl NystromMap {
    pub fn new(spec: &KernelSpec, points: &PointSet, landmarks: &[usize]) -> Result<Self> {
        if landmarks.is_empty() {
            return Err(Error::Empty);
        }
        let mut sorted = landmarks.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != landmarks.len() || sorted[sorted.len() - 1] >= points.len() {
            return Err(Error::InvalidParameter(
                "landmarks must be distinct training indices".into(),
            ));
        }
        let factor = SpdFactor::new(kernel_gram(spec, points, landmarks)).ok_or(Error::Factorization {
            node: 0,
            stage: "Nystrom landmark gram",
        })?;
        Ok(Self {
            spec: *spec,
            landmarks: points.select(landmarks),
            indices: landmarks.to_vec(),
            factor,
        })
    }

    pub fn from_parts(spec: KernelSpec, landmarks: PointSet, indices: Vec<usize>, factor: SpdFactor) -> Result<Self> {
        if landmarks.len() != indices.len() || factor.dim() != indices.len() {
            return Err(Error::InvalidParameter("malformed Nystrom map".into()));
        }
        Ok(Self {
            spec,
            landmarks,
            indices,
            factor,
        })
    }

    pub fn rank(&self) -> usize {
        self.indices.len()
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn landmarks(&self) -> &PointSet {
        &self.landmarks
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn factor(&self) -> &SpdFactor {
        &self.factor
    }

    /// Features of a new point (no jitter).
    pub fn features(&self, x: &[f64]) -> DVector<f64> {
        let all: Vec<usize> = (0..self.landmarks.len()).collect();
        let mut v = kernel_column(&self.spec, &self.landmarks, &all, x);
        self.factor.half_solve_vec_mut(&mut v);
        v
    }

    /// `Φ` for the training points, with jitter where a training point is a
    /// landmark. `Φ Φᵀ` is the Nyström Gram.
    pub fn training_features(&self, points: &PointSet) -> DMatrix<f64> {
        let all: Vec<usize> = (0..points.len()).collect();
        let mut t = kernel_block(&self.spec, points, &self.indices, &all);
        self.factor.half_solve_mut(&mut t);
        t.transpose()
    }
}

/// `Φ` with `Φ Φᵀ = K'(X, L) K'(L, L)⁻¹ K'(L, X)`.
pub fn nystrom_factor(spec: &KernelSpec, points: &PointSet, landmarks: &[usize]) -> Result<DMatrix<f64>> {
    Ok(NystromMap::new(spec, points, landmarks)?.training_features(points))
}

/// The dense Nyström Gram.
pub fn nystrom_gram(spec: &KernelSpec, points: &PointSet, landmarks: &[usize]) -> Result<DMatrix<f64>> {
    let n = points.len();
    if n > DENSE_CAP {
        return Err(Error::CapExceeded { n, cap: DENSE_CAP });
    }
    let phi = nystrom_factor(spec, points, landmarks)?;
    let mut g = &phi * phi.transpose();
    crate::linalg::symmetrize(&mut g);
    Ok(g)
}

/// Random Fourier feature map `φ(x) = √(2/r) cos(Ω x + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RffMap {
    omegas: DMatrix<f64>,
    phases: DVector<f64>,
    scale: f64,
}

impl RffMap {
    /// Samples `r` frequencies from the spectral density of `spec`'s family.
    pub fn new(spec: &KernelSpec, dim: usize, r: usize, seed: u64) -> Result<Self> {
        if r == 0 || dim == 0 {
            return Err(Error::InvalidParameter(
                "feature count and dimension must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inv = 1.0 / spec.sigma();
        let omegas = match spec.family() {
            KernelFamily::Gaussian => {
                let dist = Normal::new(0.0, inv).expect("finite scale");
                DMatrix::from_fn(r, dim, |_, _| dist.sample(&mut rng))
            }
            KernelFamily::Laplace => {
                let dist = Cauchy::new(0.0, inv).expect("finite scale");
                DMatrix::from_fn(r, dim, |_, _| dist.sample(&mut rng))
            }
            f @ KernelFamily::InverseMultiquadric => return Err(Error::UnsupportedFamily(f)),
        };
        let phase = Uniform::new(0.0, 2.0 * PI).expect("valid range");
        let phases = DVector::from_fn(r, |_, _| phase.sample(&mut rng));
        Ok(Self {
            omegas,
            phases,
            scale: num_traits::Float::sqrt(2.0 / r as f64),
        })
    }

    pub fn from_parts(omegas: DMatrix<f64>, phases: DVector<f64>) -> Result<Self> {
        if omegas.nrows() != phases.len() || omegas.nrows() == 0 {
            return Err(Error::InvalidParameter("malformed Fourier map".into()));
        }
        let scale = num_traits::Float::sqrt(2.0 / phases.len() as f64);
        Ok(Self { omegas, phases, scale })
    }

    pub fn rank(&self) -> usize {
        self.phases.len()
    }

    pub fn dim(&self) -> usize {
        self.omegas.ncols()
    }

    pub fn omegas(&self) -> &DMatrix<f64> {
        &self.omegas
    }

    pub fn phases(&self) -> &DVector<f64> {
        &self.phases
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn features(&self, x: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        let mut v = &self.omegas * DVector::from_column_slice(x) + &self.phases;
        v.apply(|a| *a = self.scale * num_traits::Float::cos(*a));
        Ok(v)
    }

    /// `n × r` feature matrix.
    pub fn map(&self, points: &PointSet) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(points.len(), self.rank());
        for (i, x) in points.rows().enumerate() {
            out.row_mut(i).tr_copy_from(&self.features(x)?);
        }
        Ok(out)
    }
}

pub fn rff_map(spec: &KernelSpec, points: &PointSet, r: usize, seed: u64) -> Result<DMatrix<f64>> {
    RffMap::new(spec, points.dim(), r, seed)?.map(points)
}

/// Block-diagonal kernel over the leaves of a tree: exact within a leaf,
/// zero across leaves.
#[derive(Clone, Debug, PartialEq)]
pub struct IndependentGram {
    perm: Vec<usize>,
    ranges: Vec<(usize, usize)>,
    blocks: Vec<DMatrix<f64>>,
}

pub fn independent_gram(spec: &KernelSpec, points: &PointSet, tree: &PartitionTree) -> Result<IndependentGram> {
    if tree.num_points() != points.len() {
        return Err(Error::DimensionMismatch {
            expected: tree.num_points(),
            found: points.len(),
        });
    }
    let leaves: Vec<_> = tree.leaves().collect();
    Ok(IndependentGram {
        perm: tree.perm().to_vec(),
        ranges: leaves.iter().map(|l| (l.lo, l.hi)).collect(),
        blocks: leaves
            .iter()
            .map(|l| kernel_gram(spec, points, tree.indices(l.id)))
            .collect(),
    })
}

impl IndependentGram {
    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    pub fn n(&self) -> usize {
        self.perm.len()
    }

    /// Training indices of block `b`.
    pub fn indices(&self, b: usize) -> &[usize] {
        let (lo, hi) = self.ranges[b];
        &self.perm[lo..hi]
    }

    /// `(K + shift·I)⁻¹ y`, block by block.
    pub fn solve(&self, y: &[f64], shift: f64) -> Result<Vec<f64>> {
        if y.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                found: y.len(),
            });
        }
        let mut w = alloc::vec![0.0; y.len()];
        for (b, block) in self.blocks.iter().enumerate() {
            let idx = self.indices(b);
            let mut k = block.clone();
            for i in 0..k.nrows() {
                k[(i, i)] += shift;
            }
            let f = SpdFactor::new(k).ok_or(Error::Factorization {
                node: b,
                stage: "independent block",
            })?;
            let mut v = DVector::from_iterator(idx.len(), idx.iter().map(|&i| y[i]));
            f.solve_vec_mut(&mut v);
            for (&i, &vi) in idx.iter().zip(v.iter()) {
                w[i] = vi;
            }
        }
        Ok(w)
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                found: v.len(),
            });
        }
        let mut out = alloc::vec![0.0; v.len()];
        for (b, block) in self.blocks.iter().enumerate() {
            let idx = self.indices(b);
            let x = DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]));
            for (&i, &yi) in idx.iter().zip((block * x).iter()) {
                out[i] = yi;
            }
        }
        Ok(out)
    }

    pub fn dense(&self) -> Result<DMatrix<f64>> {
        let n = self.n();
        if n > DENSE_CAP {
            return Err(Error::CapExceeded { n, cap: DENSE_CAP });
        }
        let mut out = DMatrix::zeros(n, n);
        for (b, block) in self.blocks.iter().enumerate() {
            let idx = self.indices(b);
            for (c, &j) in idx.iter().enumerate() {
                for (a, &i) in idx.iter().enumerate() {
                    out[(i, j)] = block[(a, c)];
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference::dense_gram;
    use rand::Rng;

    fn cloud(n: usize, d: usize, seed: u64) -> PointSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointSet::new(d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn nystrom_on_all_points_is_exact() {
        let p = cloud(20, 3, 1);
        let spec = KernelSpec::new(KernelFamily::Gaussian, 1.0, 1e-4).unwrap();
        let all: Vec<usize> = (0..20).collect();
        let g = nystrom_gram(&spec, &p, &all).unwrap();
        let k = dense_gram(&p, &spec).unwrap();
        assert!((&g - &k).amax() <= 1e-9);
    }

    #[test]
    fn nystrom_lossless_on_landmark_rows_and_psd() {
        let p = cloud(100, 4, 2);
        let spec = KernelSpec::new(KernelFamily::Laplace, 1.5, 1e-6).unwrap();
        let lm = sample_landmarks(100, 10, 3).unwrap();
        let g = nystrom_gram(&spec, &p, &lm).unwrap();
        let k = dense_gram(&p, &spec).unwrap();
        for &i in &lm {
            for j in 0..100 {
                assert!((g[(i, j)] - k[(i, j)]).abs() <= 1e-8);
            }
        }
        assert!(crate::linalg::symmetric_eigenvalues(&g).min() >= -1e-9);
        let phi = nystrom_factor(&spec, &p, &lm).unwrap();
        assert!((&phi * phi.transpose() - &g).norm() <= 1e-9 * g.norm());
    }

    #[test]
    fn rff_bounds_and_determinism() {
        let spec = KernelSpec::new(KernelFamily::Laplace, 0.5, 0.0).unwrap();
        let p = cloud(30, 5, 4);
        let a = rff_map(&spec, &p, 64, 9).unwrap();
        let b = rff_map(&spec, &p, 64, 9).unwrap();
        assert_eq!(a, b);
        let bound = (2.0f64 / 64.0).sqrt();
        assert!(a.iter().all(|v| v.abs() <= bound + 1e-15));
        let imq = KernelSpec::new(KernelFamily::InverseMultiquadric, 1.0, 0.0).unwrap();
        assert!(matches!(
            rff_map(&imq, &p, 8, 0),
            Err(Error::UnsupportedFamily(KernelFamily::InverseMultiquadric))
        ));
    }

    #[test]
    fn rff_concentrates_on_gaussian() {
        let spec = KernelSpec::new(KernelFamily::Gaussian, 1.0, 0.0).unwrap();
        let p = cloud(40, 3, 5);
        let map = RffMap::new(&spec, 3, 1 << 16, 11).unwrap();
        for k in 0..20 {
            let (x, y) = (p.row(2 * k), p.row(2 * k + 1));
            let approx = map.features(x).unwrap().dot(&map.features(y).unwrap());
            assert!((approx - spec.base(x, y)).abs() <= 0.02);
        }
    }

    #[test]
    fn independent_blocks() {
        let p = cloud(40, 2, 6);
        let spec = KernelSpec::new(KernelFamily::Gaussian, 0.5, 1e-3).unwrap();
        let t = PartitionTree::build(&p, 10, 4, 1).unwrap();
        let g = independent_gram(&spec, &p, &t).unwrap();
        let dense = g.dense().unwrap();
        let leaf = t.leaf_assignment();
        let k = dense_gram(&p, &spec).unwrap();
        for i in 0..40 {
            for j in 0..40 {
                let expect = if leaf[i] == leaf[j] { k[(i, j)] } else { 0.0 };
                assert_eq!(dense[(i, j)], expect);
            }
        }
        assert!(crate::linalg::symmetric_eigenvalues(&dense).min() > 0.0);
        let y: Vec<f64> = (0..40).map(|i| (i as f64).sin()).collect();
        let w = g.solve(&y, 0.01).unwrap();
        let back = g.apply(&w).unwrap();
        for i in 0..40 {
            assert!((back[i] + 0.01 * w[i] - y[i]).abs() <= 1e-9);
        }

        let single = PartitionTree::build(&p, 64, 4, 1).unwrap();
        assert_eq!(independent_gram(&spec, &p, &single).unwrap().dense().unwrap(), k);
    }
}
