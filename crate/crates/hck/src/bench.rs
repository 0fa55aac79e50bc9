//! Timing sweeps over training size and rank.

use std::io::Write;
use std::time::{Duration, Instant};

use hck_core::learner::{evaluate, FitStage};
use hck_core::{FitOptions, Method, Model, PointSet, Sizing};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::Dataset;

pub const CSV_HEADER: &str = "method,n,r,build_s,invert_s,predict_s,floats_stored,metric";

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub method: Method,
    pub n: usize,
    pub r: usize,
    /// Tree, factors or feature maps.
    pub build_s: f64,
    /// Factoring or inverting the regularized system.
    pub invert_s: f64,
    pub predict_s: f64,
    pub floats_stored: usize,
    pub metric: f64,
}

impl BenchRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{:.16e},{:.16e},{:.16e},{},{:.16e}",
            self.method, self.n, self.r, self.build_s, self.invert_s, self.predict_s, self.floats_stored, self.metric
        )
    }
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub methods: Vec<Method>,
    pub base: FitOptions,
    pub ranks: Vec<usize>,
    /// Training sizes, largest first. Empty means halving from the full
    /// training set down to `min_n`.
    pub sizes: Vec<usize>,
    pub min_n: usize,
    /// Timing repetitions per cell; the median is reported.
    pub repeats: usize,
}

/// Sizes `n, n/2, n/4, ...` down to `min_n`.
pub fn halving_sizes(n: usize, min_n: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut m = n;
    while m >= min_n.max(1) {
        out.push(m);
        m /= 2;
    }
    out
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// One fit and prediction with stage timings.
pub fn time_fit(train: &Dataset, test: &Dataset, opts: &FitOptions) -> anyhow::Result<(BenchRow, Model)> {
    let start = Instant::now();
    let mut marks = [None::<Duration>; 3];
    let model = Model::fit_with_observer(&train.points, &train.labels, opts, |stage| {
        let k = match stage {
            FitStage::Built => 0,
            FitStage::Inverted => 1,
            FitStage::Solved => 2,
        };
        marks[k] = Some(start.elapsed());
    })?;
    let built = marks[0].unwrap_or_default();
    let inverted = marks[1].unwrap_or(built);
    let t = Instant::now();
    let pred = model.predict(&test.points)?;
    let predict_s = t.elapsed().as_secs_f64();
    let metric = if test.is_empty() {
        f64::NAN
    } else {
        evaluate(&pred, &test.labels, opts.task)?
    };
    let row = BenchRow {
        method: opts.method,
        n: train.len(),
        r: model.rank,
        build_s: built.as_secs_f64(),
        invert_s: (inverted - built).as_secs_f64(),
        predict_s,
        floats_stored: model.floats_stored,
        metric,
    };
    Ok((row, model))
}

/// Runs every `(method, n, r)` cell. Training subsets are nested prefixes
/// of one seeded shuffle, so smaller sizes are subsets of larger ones.
pub fn run(
    train: &Dataset,
    test: &Dataset,
    cfg: &BenchConfig,
    mut progress: impl FnMut(&BenchRow),
) -> anyhow::Result<Vec<BenchRow>> {
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.base.seed));
    let sizes = if cfg.sizes.is_empty() {
        halving_sizes(train.len(), cfg.min_n)
    } else {
        cfg.sizes.clone()
    };
    let mut rows = Vec::new();
    for &n in &sizes {
        anyhow::ensure!(
            n <= train.len(),
            "size {n} exceeds the {} training samples",
            train.len()
        );
        let sub = train.select(&order[..n]);
        for &r in &cfg.ranks {
            if r > n {
                continue;
            }
            for &method in &cfg.methods {
                let mut opts = cfg.base;
                opts.method = method;
                opts.sizing = Sizing::Explicit { leaf_size: r, rank: r };
                let mut timed = Vec::with_capacity(cfg.repeats.max(1));
                for _ in 0..cfg.repeats.max(1) {
                    timed.push(time_fit(&sub, test, &opts)?.0);
                }
                let mut row = timed[0].clone();
                row.build_s = median(timed.iter().map(|t| t.build_s).collect());
                row.invert_s = median(timed.iter().map(|t| t.invert_s).collect());
                row.predict_s = median(timed.iter().map(|t| t.predict_s).collect());
                progress(&row);
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

pub fn write_csv(out: &mut impl Write, rows: &[BenchRow]) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for row in rows {
        writeln!(out, "{}", row.to_csv())?;
    }
    Ok(())
}

/// Uniform points in `[-1, 1]^d` with a smooth regression target plus
/// small noise.
pub fn synthetic(n: usize, d: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let points = PointSet::new(d, data).expect("positive dimension");
    let labels = points
        .rows()
        .map(|x| {
            let s: f64 = x.iter().enumerate().map(|(k, v)| ((k + 1) as f64 * v).sin()).sum();
            s + 0.05 * rng.random_range(-1.0..1.0)
        })
        .collect();
    Dataset { points, labels }
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let m = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / m, ly.iter().sum::<f64>() / m);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_halve() {
        assert_eq!(halving_sizes(1000, 200), vec![1000, 500, 250]);
        assert_eq!(halving_sizes(100, 200), Vec::<usize>::new());
    }

    #[test]
    fn slope_of_power_law() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(1.2)).collect();
        assert!((loglog_slope(&x, &y) - 1.2).abs() <= 1e-12);
    }

    #[test]
    fn csv_uses_seventeen_digits() {
        let row = BenchRow {
            method: Method::Nystrom,
            n: 10,
            r: 2,
            build_s: 0.1,
            invert_s: 1.0 / 3.0,
            predict_s: 0.0,
            floats_stored: 7,
            metric: 0.25,
        };
        assert_eq!(
            row.to_csv(),
            "nystrom,10,2,1.0000000000000001e-1,3.3333333333333331e-1,0.0000000000000000e0,7,2.5000000000000000e-1"
        );
    }
}
