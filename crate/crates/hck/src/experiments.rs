//! Grid search over `(σ, λ)` and kernel PCA comparisons.

use std::time::Instant;

use anyhow::{bail, Context};
use hck_core::baselines::{independent_gram, nystrom_gram, rff_map, sample_landmarks};
use hck_core::hmatrix::HierFactors;
use hck_core::kpca::{alignment, embed, Alignment};
use hck_core::learner::evaluate;
use hck_core::reference::dense_gram;
use hck_core::{FitOptions, KernelSpec, Method, Model, PartitionTree, PointSet, Task};
use nalgebra::DMatrix;

use crate::dataset::Dataset;

/// Jitter used when none is given: a tenth of `λ`.
pub const DEFAULT_JITTER_RATIO: f64 = 0.1;

/// Parses `"sigma=0.1,1;lambda=1e-3,1e-2"`. Either key may be omitted.
pub fn parse_grid(s: &str) -> anyhow::Result<(Vec<f64>, Vec<f64>)> {
    let mut sigmas = Vec::new();
    let mut lambdas = Vec::new();
    for part in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, values) = part
            .split_once('=')
            .with_context(|| format!("grid entry {part:?} is not key=values"))?;
        let values = values
            .split(',')
            .map(|v| v.trim().parse::<f64>().with_context(|| format!("bad grid value {v:?}")))
            .collect::<anyhow::Result<Vec<_>>>()?;
        match key.trim() {
            "sigma" => sigmas = values,
            "lambda" => lambdas = values,
            other => bail!("unknown grid key {other:?} (expected sigma or lambda)"),
        }
    }
    Ok((sigmas, lambdas))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridCell {
    pub sigma: f64,
    pub lambda: f64,
    pub jitter: f64,
    pub metric: f64,
    pub fit_s: f64,
}

/// Fits every `(σ, λ)` pair on `train` and scores it on `valid`. The jitter
/// is `jitter` when given, otherwise `λ · DEFAULT_JITTER_RATIO`.
pub fn grid_search(
    train: &Dataset,
    valid: &Dataset,
    base: &FitOptions,
    sigmas: &[f64],
    lambdas: &[f64],
    jitter: Option<f64>,
) -> anyhow::Result<Vec<GridCell>> {
    let mut cells = Vec::with_capacity(sigmas.len() * lambdas.len());
    for &sigma in sigmas {
        for &lambda in lambdas {
            let j = jitter.unwrap_or(lambda * DEFAULT_JITTER_RATIO);
            let mut opts = *base;
            opts.spec = KernelSpec::new(base.spec.family(), sigma, j)?;
            opts.lambda = lambda;
            let start = Instant::now();
            let model = Model::fit(&train.points, &train.labels, &opts)
                .with_context(|| format!("fit at sigma={sigma}, lambda={lambda}"))?;
            let fit_s = start.elapsed().as_secs_f64();
            let pred = model.predict(&valid.points)?;
            let metric = evaluate(&pred, &valid.labels, opts.task)?;
            cells.push(GridCell {
                sigma,
                lambda,
                jitter: j,
                metric,
                fit_s,
            });
        }
    }
    Ok(cells)
}

/// Lowest error for regression, highest accuracy for classification; ties
/// keep the earlier cell.
pub fn best_cell(cells: &[GridCell], task: Task) -> Option<&GridCell> {
    cells.iter().reduce(|a, b| {
        let better = if task.is_classification() {
            b.metric > a.metric
        } else {
            b.metric < a.metric
        };
        if better {
            b
        } else {
            a
        }
    })
}

/// Gram matrix of `method`'s approximate kernel on `points`.
pub fn method_gram(
    points: &PointSet,
    spec: &KernelSpec,
    method: Method,
    leaf_size: usize,
    rank: usize,
    seed: u64,
) -> anyhow::Result<DMatrix<f64>> {
    let n = points.len();
    Ok(match method {
        Method::Hierarchical => {
            let tree = PartitionTree::build(points, leaf_size, rank, seed)?;
            HierFactors::assemble(&tree, points, spec)?.materialize()?
        }
        Method::Nystrom => nystrom_gram(spec, points, &sample_landmarks(n, rank.min(n), seed)?)?,
        Method::Fourier => {
            let phi = rff_map(spec, points, rank, seed)?;
            &phi * phi.transpose()
        }
        Method::Independent => {
            let tree = PartitionTree::build(points, leaf_size, rank.min(leaf_size), seed)?;
            independent_gram(spec, points, &tree)?.dense()?
        }
    })
}

/// Embedding of the exact kernel and, for each approximate configuration,
/// its embedding's alignment difference against it.
pub struct KpcaComparison {
    pub exact: DMatrix<f64>,
    pub approx: Vec<(Method, usize, usize, DMatrix<f64>, Alignment)>,
}

pub fn kpca_compare(
    points: &PointSet,
    spec: &KernelSpec,
    configs: &[(Method, usize, usize)],
    q: usize,
    seed: u64,
) -> anyhow::Result<KpcaComparison> {
    let exact = embed(&dense_gram(points, spec)?, q)?;
    let mut approx = Vec::with_capacity(configs.len());
    for &(method, leaf_size, rank) in configs {
        let g = method_gram(points, spec, method, leaf_size, rank, seed)?;
        let u = embed(&g, q)?;
        let a = alignment(&exact, &u)?;
        approx.push((method, leaf_size, rank, u, a));
    }
    Ok(KpcaComparison { exact, approx })
}
