//! Command-line interface.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context};
use clap::{Args, Parser, Subcommand};
use hck_core::kernels::{KernelFamily, KernelSpec};
use hck_core::learner::evaluate;
use hck_core::{FitOptions, Method, Model, Sizing, Task};

use crate::bench::{self, BenchConfig};
use crate::dataset::{self, Dataset, LabelKind};
use crate::experiments::{self, best_cell, grid_search, parse_grid, DEFAULT_JITTER_RATIO};
use crate::model_io::{load_model, save_model};

#[derive(Debug, Parser)]
#[command(name = "hck", version, about = "Hierarchically compositional kernel learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model, optionally selecting (sigma, lambda) by grid search.
    Train(TrainArgs),
    /// Write predictions of a saved model.
    Predict(PredictArgs),
    /// Score a saved model on labelled data.
    Eval(EvalArgs),
    /// Time fits over training sizes and ranks.
    Bench(BenchArgs),
    /// Compare kernel PCA embeddings of approximate kernels with the exact one.
    Kpca(KpcaArgs),
}

#[derive(Debug, Clone, Args)]
pub struct KernelArgs {
    #[arg(long, default_value = "gaussian", value_parser = parse_family)]
    pub kernel: KernelFamily,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 1e-2)]
    pub lambda: f64,
    /// Diagonal jitter; defaults to lambda/10 and must be below lambda.
    #[arg(long)]
    pub jitter: Option<f64>,
}

impl KernelArgs {
    fn spec(&self) -> anyhow::Result<KernelSpec> {
        let jitter = self.jitter.unwrap_or(self.lambda * DEFAULT_JITTER_RATIO);
        ensure!(
            jitter < self.lambda,
            "--jitter ({jitter}) must be below --lambda ({})",
            self.lambda
        );
        Ok(KernelSpec::new(self.kernel, self.sigma, jitter)?)
    }
}

#[derive(Debug, Clone, Args)]
pub struct SizingArgs {
    /// Levels below the root; sets both leaf size and rank from n.
    #[arg(long, conflicts_with_all = ["n0", "rank"])]
    pub levels: Option<u32>,
    /// Leaf capacity.
    #[arg(long, requires = "rank")]
    pub n0: Option<usize>,
    #[arg(long)]
    pub rank: Option<usize>,
}

impl SizingArgs {
    fn sizing(&self) -> Sizing {
        match (self.levels, self.n0, self.rank) {
            (Some(j), _, _) => Sizing::Levels(j),
            (None, n0, Some(r)) => Sizing::Explicit {
                leaf_size: n0.unwrap_or(r),
                rank: r,
            },
            _ => Sizing::Levels(5),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub train: PathBuf,
    /// Held-out data; when absent the training file is split 4:1.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    #[arg(long, default_value = "reg", value_parser = parse_task)]
    pub task: Task,
    /// Skip min-max scaling of attributes to [-1, 1].
    #[arg(long)]
    pub no_normalize: bool,
}

/// Training and held-out sets after deduplication and scaling, plus the
/// held-out set as read.
pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
    pub raw_test: Dataset,
    pub scaling: Option<hck_core::learner::FeatureScaling>,
}

impl DataArgs {
    fn kind(&self) -> LabelKind {
        if self.task.is_classification() {
            LabelKind::Integer
        } else {
            LabelKind::Real
        }
    }

    pub fn load(&self) -> anyhow::Result<Prepared> {
        let all = dataset::parse_libsvm(&self.train, self.kind())?;
        let (train, test) = match &self.test {
            Some(p) => (all, dataset::parse_libsvm(p, self.kind())?),
            None => dataset::split_train_test(&all, self.split_seed),
        };
        let d = train.dim().max(test.dim());
        let raw_test = test.widen(d)?;
        let (train, test, scaling, report) = dataset::preprocess(&train, &test, !self.no_normalize)?;
        if report.duplicates_removed + report.conflicts_removed > 0 {
            eprintln!(
                "removed {} duplicate and {} conflicting training rows",
                report.duplicates_removed, report.conflicts_removed
            );
        }
        Ok(Prepared {
            train,
            test,
            raw_test,
            scaling,
        })
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[command(flatten)]
    pub sizing: SizingArgs,
    #[arg(long, default_value = "hier", value_parser = parse_method)]
    pub method: Method,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub model: PathBuf,
    /// Grid such as "sigma=0.3,1,3;lambda=1e-3,1e-2". Cells are scored on
    /// the held-out set and the best one is refitted and saved.
    #[arg(long)]
    pub grid: Option<String>,
    /// CSV of grid cells.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Training data; a synthetic set is generated when absent.
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    #[arg(long, default_value = "reg", value_parser = parse_task)]
    pub task: Task,
    #[command(flatten)]
    pub kernel: KernelArgs,
    /// Comma-separated methods.
    #[arg(long, default_value = "hier,nystrom,rff,indep", value_delimiter = ',', value_parser = parse_method)]
    pub method: Vec<Method>,
    /// Comma-separated ranks; each sets the leaf size too.
    #[arg(long, default_value = "64", value_delimiter = ',')]
    pub rank: Vec<usize>,
    /// Smallest training size of the halving sweep.
    #[arg(long, default_value_t = 1024)]
    pub min_n: usize,
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    /// Size of the synthetic training set.
    #[arg(long, default_value_t = 16384)]
    pub synthetic_n: usize,
    #[arg(long, default_value_t = 8)]
    pub synthetic_d: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct KpcaArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long, default_value = "gaussian", value_parser = parse_family)]
    pub kernel: KernelFamily,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Embedding dimension.
    #[arg(long, default_value_t = 3)]
    pub q: usize,
    /// Rows drawn (with `--seed`) before embedding.
    #[arg(long, default_value_t = 2000)]
    pub subsample: usize,
    #[arg(long, default_value = "hier,nystrom,rff,indep", value_delimiter = ',', value_parser = parse_method)]
    pub method: Vec<Method>,
    /// Comma-separated ranks; each sets the leaf size too.
    #[arg(long, default_value = "32,129,516", value_delimiter = ',')]
    pub rank: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub no_normalize: bool,
    /// CSV of embeddings; alignment numbers go to standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_family(s: &str) -> Result<KernelFamily, String> {
    KernelFamily::from_name(s).ok_or_else(|| format!("unknown kernel {s:?} (gaussian, laplace, invmq)"))
}

fn parse_method(s: &str) -> Result<Method, String> {
    Method::from_name(s).ok_or_else(|| format!("unknown method {s:?} (hier, nystrom, rff, indep)"))
}

fn parse_task(s: &str) -> Result<Task, String> {
    Task::from_name(s).ok_or_else(|| format!("unknown task {s:?} (reg, bin, multi)"))
}

fn metric_name(task: Task) -> &'static str {
    if task.is_classification() {
        "accuracy"
    } else {
        "relative_error"
    }
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

/// Runs one command, writing human-readable results to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> anyhow::Result<()> {
    match cli.command {
        Command::Train(a) => train(a, out),
        Command::Predict(a) => predict(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Bench(a) => run_bench(a, out),
        Command::Kpca(a) => kpca(a, out),
    }
}

fn train(a: TrainArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let data = a.data.load()?;
    let mut opts = FitOptions {
        method: a.method,
        spec: a.kernel.spec()?,
        lambda: a.kernel.lambda,
        task: a.data.task,
        sizing: a.sizing.sizing(),
        seed: a.seed,
    };
    if let Some(grid) = &a.grid {
        let (mut sigmas, mut lambdas) = parse_grid(grid)?;
        if sigmas.is_empty() {
            sigmas.push(a.kernel.sigma);
        }
        if lambdas.is_empty() {
            lambdas.push(a.kernel.lambda);
        }
        let cells = grid_search(&data.train, &data.test, &opts, &sigmas, &lambdas, a.kernel.jitter)?;
        if let Some(path) = &a.out {
            let mut w = create(path)?;
            writeln!(w, "sigma,lambda,jitter,{},fit_s", metric_name(opts.task))?;
            for c in &cells {
                writeln!(
                    w,
                    "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                    c.sigma, c.lambda, c.jitter, c.metric, c.fit_s
                )?;
            }
            w.flush()?;
        }
        let best = best_cell(&cells, opts.task).context("empty grid")?;
        writeln!(
            out,
            "best sigma={} lambda={} {}={}",
            best.sigma,
            best.lambda,
            metric_name(opts.task),
            best.metric
        )?;
        opts.spec = KernelSpec::new(opts.spec.family(), best.sigma, best.jitter)?;
        opts.lambda = best.lambda;
    }
    let mut model = Model::fit(&data.train.points, &data.train.labels, &opts)?;
    model.scaling = data.scaling;
    if !data.raw_test.is_empty() {
        let pred = model.predict(&data.raw_test.points)?;
        let metric = evaluate(&pred, &data.raw_test.labels, opts.task)?;
        writeln!(out, "{}={metric}", metric_name(opts.task))?;
    }
    save_model(&model, &a.model)?;
    writeln!(
        out,
        "saved {} model (n={}, leaf={}, rank={}) to {}",
        model.method,
        model.n_train,
        model.leaf_size,
        model.rank,
        a.model.display()
    )?;
    Ok(())
}

fn load_for(model: &Model, path: &Path) -> anyhow::Result<Dataset> {
    let kind = if model.task.is_classification() {
        LabelKind::Integer
    } else {
        LabelKind::Real
    };
    let data = dataset::parse_libsvm(path, kind)?;
    if data.dim() > model.dim {
        bail!(
            "{} has {} attributes but the model expects {}",
            path.display(),
            data.dim(),
            model.dim
        );
    }
    Ok(data.widen(model.dim)?)
}

fn predict(a: PredictArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let model = load_model(&a.model)?;
    let data = load_for(&model, &a.test)?;
    let scores = model.scores(&data.points)?;
    let mut file;
    let w: &mut dyn Write = match &a.out {
        Some(p) => {
            file = create(p)?;
            &mut file
        }
        None => out,
    };
    let heads: Vec<String> = (0..model.outputs()).map(|k| format!("score{k}")).collect();
    writeln!(w, "prediction,{}", heads.join(","))?;
    for s in &scores {
        let cols: Vec<String> = s.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(w, "{:.16e},{}", model.decide(s), cols.join(","))?;
    }
    w.flush()?;
    Ok(())
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let model = load_model(&a.model)?;
    let data = load_for(&model, &a.test)?;
    let pred = model.predict(&data.points)?;
    let metric = evaluate(&pred, &data.labels, model.task)?;
    writeln!(out, "{}={metric}", metric_name(model.task))?;
    Ok(())
}

fn run_bench(a: BenchArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let (train, test) = match &a.train {
        Some(path) => {
            let args = DataArgs {
                train: path.clone(),
                test: a.test.clone(),
                split_seed: a.split_seed,
                task: a.task,
                no_normalize: false,
            };
            let d = args.load()?;
            (d.train, d.test)
        }
        None => {
            let all = bench::synthetic(a.synthetic_n + a.synthetic_n / 4, a.synthetic_d, a.seed);
            let (train, test) = dataset::split(&all, a.synthetic_n as f64 / all.len() as f64, a.split_seed);
            (train, test)
        }
    };
    let cfg = BenchConfig {
        methods: a.method.clone(),
        base: FitOptions {
            method: Method::Hierarchical,
            spec: a.kernel.spec()?,
            lambda: a.kernel.lambda,
            task: a.task,
            sizing: Sizing::Levels(0),
            seed: a.seed,
        },
        ranks: a.rank.clone(),
        sizes: Vec::new(),
        min_n: a.min_n,
        repeats: a.repeats,
    };
    let mut file = a.out.as_deref().map(create).transpose()?;
    if let Some(f) = file.as_mut() {
        writeln!(f, "{}", bench::CSV_HEADER)?;
    }
    writeln!(out, "{}", bench::CSV_HEADER)?;
    let mut err = None;
    bench::run(&train, &test, &cfg, |row| {
        let line = row.to_csv();
        let res = writeln!(out, "{line}").and_then(|_| match file.as_mut() {
            Some(f) => writeln!(f, "{line}").and_then(|_| f.flush()),
            None => Ok(()),
        });
        if let Err(e) = res {
            err.get_or_insert(e);
        }
    })?;
    if let Some(e) = err {
        return Err(e.into());
    }
    Ok(())
}

fn kpca(a: KpcaArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let all = dataset::parse_libsvm(&a.train, LabelKind::Real)?;
    let sub = dataset::subsample(&all, a.subsample, a.seed);
    let (sub, _, _, _) = dataset::preprocess(
        &sub,
        &Dataset {
            points: hck_core::PointSet::new(sub.dim(), Vec::new())?,
            labels: Vec::new(),
        },
        !a.no_normalize,
    )?;
    let spec = KernelSpec::new(a.kernel, a.sigma, 0.0)?;
    let configs: Vec<(Method, usize, usize)> = a
        .method
        .iter()
        .flat_map(|&m| a.rank.iter().map(move |&r| (m, r, r)))
        .collect();
    let cmp = experiments::kpca_compare(&sub.points, &spec, &configs, a.q, a.seed)?;
    writeln!(out, "method,n0,rank,alignment_diff,rank_deficient")?;
    for (m, n0, r, _, al) in &cmp.approx {
        writeln!(out, "{m},{n0},{r},{:.16e},{}", al.value, al.rank_deficient)?;
    }
    if let Some(path) = &a.out {
        let mut w = create(path)?;
        let mut head = vec!["row".to_string()];
        head.extend((0..a.q).map(|j| format!("exact_{j}")));
        for (m, _, r, _, _) in &cmp.approx {
            head.extend((0..a.q).map(|j| format!("{m}_r{r}_{j}")));
        }
        writeln!(w, "{}", head.join(","))?;
        for i in 0..sub.len() {
            let mut cols = vec![i.to_string()];
            cols.extend((0..a.q).map(|j| format!("{:.16e}", cmp.exact[(i, j)])));
            for (_, _, _, u, _) in &cmp.approx {
                cols.extend((0..a.q).map(|j| format!("{:.16e}", u[(i, j)])));
            }
            writeln!(w, "{}", cols.join(","))?;
        }
        w.flush()?;
    }
    Ok(())
}
