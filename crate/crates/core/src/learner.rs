//! Kernel ridge regression and one-vs-all classification.
//!
//! Every method solves `w = (K + λI)⁻¹ y` for its own approximate kernel.
//! The hierarchical method splits the ridge as `λ = λ' + (λ − λ')`: the
//! jitter `λ'` is built into the factors and the remainder is the shift of
//! the inversion. Feature-map methods solve the `r × r` normal equations
//! `(ΦᵀΦ + λI) z = Φᵀ y` and keep `z` instead of `w`.

use alloc::string::ToString;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::{DMatrix, DVector};

use crate::baselines::{independent_gram, sample_landmarks, NystromMap, RffMap};
use crate::hmatrix::{HierFactors, OosState};
use crate::kernels::KernelSpec;
use crate::linalg::SpdFactor;
use crate::partition::{levels_to_sizes, PartitionTree};
use crate::{Error, PointSet, Result, DENSE_CAP};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Hierarchical,
    Nystrom,
    Fourier,
    Independent,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Hierarchical,
        Method::Nystrom,
        Method::Fourier,
        Method::Independent,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Hierarchical => "hier",
            Method::Nystrom => "nystrom",
            Method::Fourier => "rff",
            Method::Independent => "indep",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    Regression,
    Binary,
    Multiclass,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Regression => "reg",
            Task::Binary => "bin",
            Task::Multiclass => "multi",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [Task::Regression, Task::Binary, Task::Multiclass]
            .into_iter()
            .find(|t| t.name() == s)
    }

    pub fn is_classification(self) -> bool {
        self != Task::Regression
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How leaf capacity and rank are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sizing {
    /// `j` levels below the root: `n0 = ⌈n/2ʲ⌉`, `r = ⌊n/2ʲ⌋`.
    Levels(u32),
    Explicit {
        leaf_size: usize,
        rank: usize,
    },
}

impl Sizing {
    pub fn resolve(self, n: usize) -> Result<(usize, usize)> {
        match self {
            Sizing::Levels(j) => levels_to_sizes(n, j),
            Sizing::Explicit { leaf_size, rank } => {
                if leaf_size == 0 || rank == 0 {
                    return Err(Error::InvalidParameter("leaf size and rank must be positive".into()));
                }
                if rank > leaf_size {
                    return Err(Error::RankExceedsLeaf { rank, leaf_size });
                }
                Ok((leaf_size, rank))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitOptions {
    pub method: Method,
    pub spec: KernelSpec,
    pub lambda: f64,
    pub task: Task,
    pub sizing: Sizing,
    pub seed: u64,
}

/// Progress markers passed to the observer of [`Model::fit_with_observer`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FitStage {
    /// Tree, factors or feature maps are built.
    Built,
    /// The regularized system is factored or inverted.
    Inverted,
    /// Weights and prediction state are ready.
    Solved,
}

/// Per-attribute min-max scaling to `[-1, 1]` from training statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureScaling {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

impl FeatureScaling {
    pub fn from_points(points: &PointSet) -> Self {
        let d = points.dim();
        let mut mins = alloc::vec![f64::INFINITY; d];
        let mut maxs = alloc::vec![f64::NEG_INFINITY; d];
        for x in points.rows() {
            for k in 0..d {
                mins[k] = mins[k].min(x[k]);
                maxs[k] = maxs[k].max(x[k]);
            }
        }
        Self { mins, maxs }
    }

    pub fn dim(&self) -> usize {
        self.mins.len()
    }

    /// `2(x − min)/(max − min) − 1`; attributes constant on the training set
    /// map to 0. Values outside the training range are not clipped.
    pub fn apply_in_place(&self, x: &mut [f64]) {
        for ((v, &lo), &hi) in x.iter_mut().zip(&self.mins).zip(&self.maxs) {
            *v = if hi > lo {
                2.0 * (*v - lo) / (hi - lo) - 1.0
            } else {
                0.0
            };
        }
    }

    pub fn apply(&self, points: &PointSet) -> PointSet {
        let mut out = points.clone();
        let d = out.dim();
        for row in out.as_mut_slice().chunks_exact_mut(d) {
            self.apply_in_place(row);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Predictor {
    Hierarchical(OosState),
    Nystrom {
        map: NystromMap,
        /// `r × outputs`.
        coef: DMatrix<f64>,
    },
    Fourier {
        map: RffMap,
        coef: DMatrix<f64>,
    },
    Independent {
        tree: PartitionTree,
        points: PointSet,
        spec: KernelSpec,
        weights: Vec<Vec<f64>>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub method: Method,
    pub spec: KernelSpec,
    pub lambda: f64,
    pub task: Task,
    /// Sorted distinct labels for classification, empty for regression.
    pub classes: Vec<f64>,
    pub seed: u64,
    pub leaf_size: usize,
    pub rank: usize,
    pub n_train: usize,
    pub dim: usize,
    /// Reals held by the training-time kernel representation.
    pub floats_stored: usize,
    /// Applied to inputs in [`Model::predict`] when present.
    pub scaling: Option<FeatureScaling>,
    pub predictor: Predictor,
}

impl Model {
    pub fn fit(points: &PointSet, labels: &[f64], opts: &FitOptions) -> Result<Self> {
        Self::fit_with_observer(points, labels, opts, |_| {})
    }

    pub fn fit_with_observer(
        points: &PointSet,
        labels: &[f64],
        opts: &FitOptions,
        mut observe: impl FnMut(FitStage),
    ) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::Empty);
        }
        if labels.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: labels.len(),
            });
        }
        let spec = opts.spec;
        if !(opts.lambda.is_finite() && opts.lambda > spec.jitter()) {
            return Err(Error::InvalidParameter(alloc::format!(
                "lambda ({}) must exceed the jitter ({})",
                opts.lambda,
                spec.jitter()
            )));
        }
        let (classes, targets) = encode_targets(labels, opts.task)?;
        let (leaf_size, rank) = opts.sizing.resolve(n)?;
        let rank = rank.min(n);
        let shift = opts.lambda - spec.jitter();

        let (predictor, floats_stored) = match opts.method {
            Method::Hierarchical => {
                let tree = PartitionTree::build(points, leaf_size, rank, opts.seed)?;
                let h = HierFactors::assemble(&tree, points, &spec)?;
                observe(FitStage::Built);
                let inv = h.invert(shift)?;
                observe(FitStage::Inverted);
                let weights = targets.iter().map(|t| inv.matvec(t)).collect::<Result<Vec<_>>>()?;
                drop(inv);
                let state = OosState::prepare(&h, &tree, points, &spec, &weights)?;
                (Predictor::Hierarchical(state), h.floats_stored())
            }
            Method::Nystrom => {
                let lm = sample_landmarks(n, rank, opts.seed)?;
                let map = NystromMap::new(&spec, points, &lm)?;
                let phi = map.training_features(points);
                observe(FitStage::Built);
                let coef = ridge_normal_equations(&phi, &targets, opts.lambda, &mut observe)?;
                let floats = phi.len() + map.factor().lower().len();
                (Predictor::Nystrom { map, coef }, floats)
            }
            Method::Fourier => {
                let map = RffMap::new(&spec, points.dim(), rank, opts.seed)?;
                let phi = map.map(points)?;
                observe(FitStage::Built);
                let coef = ridge_normal_equations(&phi, &targets, opts.lambda, &mut observe)?;
                let floats = phi.len() + map.omegas().len() + map.phases().len();
                (Predictor::Fourier { map, coef }, floats)
            }
            Method::Independent => {
                let tree = PartitionTree::build(points, leaf_size, rank.min(leaf_size), opts.seed)?;
                let g = independent_gram(&spec, points, &tree)?;
                observe(FitStage::Built);
                let weights = targets.iter().map(|t| g.solve(t, shift)).collect::<Result<Vec<_>>>()?;
                observe(FitStage::Inverted);
                let floats = g.blocks().iter().map(|b| b.len()).sum();
                (
                    Predictor::Independent {
                        tree,
                        points: points.clone(),
                        spec,
                        weights,
                    },
                    floats,
                )
            }
        };
        observe(FitStage::Solved);
        Ok(Self {
            method: opts.method,
            spec,
            lambda: opts.lambda,
            task: opts.task,
            classes,
            seed: opts.seed,
            leaf_size,
            rank,
            n_train: n,
            dim: points.dim(),
            floats_stored,
            scaling: None,
            predictor,
        })
    }

    /// Number of score outputs: 1 for regression and binary tasks, one per
    /// class otherwise.
    pub fn outputs(&self) -> usize {
        match self.task {
            Task::Multiclass => self.classes.len(),
            _ => 1,
        }
    }

    /// Raw scores `wᵀ k(X, x)` of one (already scaled) point.
    pub fn scores_scaled(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        match &self.predictor {
            Predictor::Hierarchical(state) => state.eval(x),
            Predictor::Nystrom { map, coef } => Ok(coef.tr_mul(&map.features(x)).as_slice().to_vec()),
            Predictor::Fourier { map, coef } => Ok(coef.tr_mul(&map.features(x)?).as_slice().to_vec()),
            Predictor::Independent {
                tree,
                points,
                spec,
                weights,
            } => {
                let leaf = tree.leaf_of(x)?;
                let idx = tree.indices(leaf);
                let k: Vec<f64> = idx.iter().map(|&i| spec.base(points.row(i), x)).collect();
                Ok(weights
                    .iter()
                    .map(|w| idx.iter().zip(&k).map(|(&i, v)| w[i] * v).sum())
                    .collect())
            }
        }
    }

    /// Scores for each row of `points`, applying the model's input scaling.
    pub fn scores(&self, points: &PointSet) -> Result<Vec<Vec<f64>>> {
        if points.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: points.dim(),
            });
        }
        let mut buf = alloc::vec![0.0; self.dim];
        points
            .rows()
            .map(|x| {
                buf.copy_from_slice(x);
                if let Some(s) = &self.scaling {
                    s.apply_in_place(&mut buf);
                }
                self.scores_scaled(&buf)
            })
            .collect()
    }

    /// Real predictions for regression, class labels otherwise.
    pub fn predict(&self, points: &PointSet) -> Result<Vec<f64>> {
        Ok(self.scores(points)?.iter().map(|s| self.decide(s)).collect())
    }

    /// Maps one score vector to an output.
    pub fn decide(&self, scores: &[f64]) -> f64 {
        match self.task {
            Task::Regression => scores[0],
            Task::Binary => {
                if scores[0] > 0.0 {
                    self.classes[1]
                } else {
                    self.classes[0]
                }
            }
            Task::Multiclass => {
                let mut best = 0;
                for (k, &s) in scores.iter().enumerate() {
                    if s > scores[best] {
                        best = k;
                    }
                }
                self.classes[best]
            }
        }
    }
}

fn encode_targets(labels: &[f64], task: Task) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if labels.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("labels must be finite".into()));
    }
    if task == Task::Regression {
        return Ok((Vec::new(), alloc::vec![labels.to_vec()]));
    }
    let mut classes = labels.to_vec();
    classes.sort_by(f64::total_cmp);
    classes.dedup();
    let pm = |hit: bool| if hit { 1.0 } else { -1.0 };
    match task {
        Task::Binary => {
            if classes.len() > 2 {
                return Err(Error::InvalidParameter(alloc::format!(
                    "binary task with {} distinct labels",
                    classes.len()
                )));
            }
            if classes.len() < 2 {
                return Err(Error::EmptyClass("second binary class".to_string()));
            }
            let t = labels.iter().map(|&y| pm(y == classes[1])).collect();
            Ok((classes, alloc::vec![t]))
        }
        _ => {
            if classes.len() < 2 {
                return Err(Error::EmptyClass("at least two classes are required".to_string()));
            }
            let t = classes
                .iter()
                .map(|&c| labels.iter().map(|&y| pm(y == c)).collect())
                .collect();
            Ok((classes, t))
        }
    }
}

/// `Z = (ΦᵀΦ + λI)⁻¹ Φᵀ Y`, one column per target.
fn ridge_normal_equations(
    phi: &DMatrix<f64>,
    targets: &[Vec<f64>],
    lambda: f64,
    observe: &mut impl FnMut(FitStage),
) -> Result<DMatrix<f64>> {
    let r = phi.ncols();
    let mut g = phi.tr_mul(phi);
    for i in 0..r {
        g[(i, i)] += lambda;
    }
    let f = SpdFactor::new(g).ok_or(Error::Factorization {
        node: 0,
        stage: "normal equations",
    })?;
    observe(FitStage::Inverted);
    let y = DMatrix::from_fn(phi.nrows(), targets.len(), |i, k| targets[k][i]);
    let mut z = phi.tr_mul(&y);
    f.solve_mut(&mut z);
    Ok(z)
}

/// Relative error `‖pred − truth‖ / ‖truth‖` for regression, accuracy for
/// classification.
pub fn evaluate(pred: &[f64], truth: &[f64], task: Task) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            found: pred.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::Empty);
    }
    if task.is_classification() {
        let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
        return Ok(hits as f64 / truth.len() as f64);
    }
    let norm: f64 = truth.iter().map(|t| t * t).sum();
    if norm == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let err: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(num_traits::Float::sqrt(err / norm))
}

/// Dense Gaussian-process posterior with the unjittered base kernel:
/// mean `K*ᵀ (K + λI)⁻¹ y` and covariance `K** − K*ᵀ (K + λI)⁻¹ K*`.
pub fn gp_posterior_dense(
    train: &PointSet,
    y: &[f64],
    test: &PointSet,
    spec: &KernelSpec,
    lambda: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (n, m) = (train.len(), test.len());
    if n.max(m) > DENSE_CAP {
        return Err(Error::CapExceeded {
            n: n.max(m),
            cap: DENSE_CAP,
        });
    }
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: y.len(),
        });
    }
    if train.dim() != test.dim() {
        return Err(Error::DimensionMismatch {
            expected: train.dim(),
            found: test.dim(),
        });
    }
    let mut k = DMatrix::from_fn(n, n, |i, j| spec.base(train.row(i), train.row(j)));
    for i in 0..n {
        k[(i, i)] += lambda;
    }
    let f = SpdFactor::new(k).ok_or(Error::Factorization {
        node: 0,
        stage: "posterior gram",
    })?;
    let cross = DMatrix::from_fn(n, m, |i, j| spec.base(train.row(i), test.row(j)));
    let alpha = f.solve_vec(&DVector::from_column_slice(y));
    let mean = cross.tr_mul(&alpha);
    let mut solved = cross.clone();
    f.solve_mut(&mut solved);
    let kss = DMatrix::from_fn(m, m, |i, j| spec.base(test.row(i), test.row(j)));
    let mut cov = kss - cross.tr_mul(&solved);
    crate::linalg::symmetrize(&mut cov);
    Ok((mean, cov))
}
