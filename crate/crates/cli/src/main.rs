use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use svrg_core::data::{synth_binary, synth_imbalanced, write_libsvm};
use svrg_core::harness::{parse_config, plots_from_dir, run_experiment, ConfigError, ExperimentSpec, HarnessError};
use svrg_core::reference::{ReferenceCache, ReferenceError, ReferenceOptions, CACHE_ENV};
use svrg_core::{solve_reference, DataError, LabelRule, LossError, LossKind, LossModel, OptimError, ParseOptions};

#[derive(Parser)]
#[command(name = "svrg", version, about = "Variance-reduced SGD experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Grid-search every method and write CSVs and figures.
    Run(Box<RunArgs>),
    /// Rebuild figures from a results directory.
    Plot {
        /// Directory holding index.csv.
        #[arg(long)]
        from: PathBuf,
        /// Output directory (default: <from>/plots).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve for the minimizer of one model.
    Reference {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        lambda: f64,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, default_value = "logistic")]
        model: String,
        #[arg(long)]
        label_map: Option<String>,
        /// Map label 0 to -1.
        #[arg(long)]
        binary_labels: bool,
        /// Print the minimizer as well.
        #[arg(long)]
        print_w: bool,
    },
    /// Write a synthetic dataset in LIBSVM format.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Use the bounded, correlated, class-imbalanced generator.
        #[arg(long)]
        imbalanced: bool,
        #[arg(long, default_value_t = 0.9)]
        separability: f64,
        #[arg(long, default_value_t = 0.1)]
        positive_rate: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    /// Flat key = value experiment file.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, conflicts_with_all = ["synth", "imbalanced"])]
    data: Option<String>,
    /// n,d,seed
    #[arg(long, conflicts_with = "imbalanced")]
    synth: Option<String>,
    /// n,d,seed
    #[arg(long)]
    imbalanced: Option<String>,
    /// logistic | svm
    #[arg(long)]
    model: Option<String>,
    /// Comma-separated λ values.
    #[arg(long)]
    lambda: Option<String>,
    /// Comma-separated method names, e.g. SVRG,SVRG-2BB,SVRG-2BBS-M3.
    #[arg(long)]
    methods: Option<String>,
    /// Comma-separated step grid.
    #[arg(long)]
    grid: Option<String>,
    /// Explicit steps such as constant:0.1, epochbb:0.01 or m3:0.1.
    #[arg(long = "step")]
    steps: Vec<String>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Inner loop length (default 2n).
    #[arg(long)]
    inner: Option<usize>,
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    scale: bool,
    /// e.g. 3:-1,8:1
    #[arg(long)]
    label_map: Option<String>,
    #[arg(long)]
    subsample: Option<usize>,
    /// last | random
    #[arg(long)]
    anchor: Option<String>,
    /// last | start | off
    #[arg(long)]
    variance: Option<String>,
    #[arg(long)]
    ref_tol: Option<f64>,
    /// Run grid points one at a time.
    #[arg(long)]
    sequential: bool,
}

impl RunArgs {
    fn pairs(&self) -> Vec<(String, String)> {
        let mut p = Vec::new();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                p.push((k.to_string(), v));
            }
        };
        push("data", self.data.clone());
        push("synth", self.synth.clone());
        push("imbalanced", self.imbalanced.clone());
        push("model", self.model.clone());
        push("lambda", self.lambda.clone());
        push("methods", self.methods.clone());
        push("grid", self.grid.clone());
        push("steps", (!self.steps.is_empty()).then(|| self.steps.join(",")));
        push("epochs", self.epochs.map(|v| v.to_string()));
        push("inner", self.inner.map(|v| v.to_string()));
        push("seeds", self.seeds.clone());
        push("out", self.out.as_ref().map(|v| v.display().to_string()));
        push("scale", self.scale.then(|| "true".into()));
        push("label_map", self.label_map.clone());
        push("subsample", self.subsample.map(|v| v.to_string()));
        push("anchor", self.anchor.clone());
        push("variance", self.variance.clone());
        push("ref_tol", self.ref_tol.map(|v| format!("{v:e}")));
        push("parallel", self.sequential.then(|| "false".into()));
        p
    }
}

fn run(args: RunArgs) -> Result<()> {
    let mut pairs = match &args.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            parse_config(&text).with_context(|| format!("in {}", path.display()))?
        }
        None => Vec::new(),
    };
    pairs.extend(args.pairs());
    let spec = ExperimentSpec::from_pairs(&pairs)?;
    let table = run_experiment(&spec)?;

    println!("dataset {} ({}), n = {}, m = {}", table.dataset, table.model.name(), table.n, table.inner_len);
    for (lambda, why) in &table.skipped {
        eprintln!("warning: λ = {lambda:e} skipped: {why}");
    }
    println!("{:<16} {:>10} {:>10} {:>14}", "method", "lambda", "param", "final gap");
    for w in &table.winners {
        println!("{:<16} {:>10.1e} {:>10.1e} {:>14.6e}", w.method.name(), w.lambda, w.param, w.final_gap);
    }
    if let Some(out) = &spec.out_dir {
        println!("results written to {}", out.display());
    }
    Ok(())
}

fn plot(from: PathBuf, out: Option<PathBuf>) -> Result<()> {
    let out = out.unwrap_or_else(|| from.join("plots"));
    let report = plots_from_dir(&from, &out)?;
    if let Some(notice) = report.notice {
        println!("{notice}");
    }
    for f in report.files {
        println!("{}", f.display());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn reference(
    data: PathBuf,
    lambda: f64,
    tol: f64,
    model: String,
    label_map: Option<String>,
    binary_labels: bool,
    print_w: bool,
) -> Result<()> {
    let kind: LossKind = model.parse().map_err(|e| HarnessError::Config(format!("model: {e}")))?;
    let labels = match (label_map, binary_labels) {
        (Some(m), _) => LabelRule::parse_map(&m).map_err(|e| HarnessError::Config(format!("label map: {e}")))?,
        (None, true) => LabelRule::Binary,
        (None, false) => LabelRule::AsIs,
    };
    let ds = svrg_core::data::load_libsvm(&data, &ParseOptions { labels, dim: None })?;
    let model = LossModel::new(Arc::new(ds), lambda, kind)?;
    let opts = ReferenceOptions { tol, ..Default::default() };
    let sol = match ReferenceCache::from_env() {
        Some(cache) => cache.solve(&model, &opts)?,
        None => solve_reference(&model, &opts)?,
    };
    println!("f_star = {:e}", sol.f_star);
    println!("grad_norm = {:e}", sol.grad_norm);
    println!("iterations = {}", sol.iterations);
    if std::env::var_os(CACHE_ENV).is_none() {
        println!("(set {CACHE_ENV} to cache solutions)");
    }
    if print_w {
        let w: Vec<String> = sol.w_star.iter().map(|v| format!("{v:e}")).collect();
        println!("w_star = {}", w.join(","));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn synth(
    n: usize,
    d: usize,
    seed: u64,
    imbalanced: bool,
    separability: f64,
    positive_rate: f64,
    out: PathBuf,
) -> Result<()> {
    if n == 0 || d == 0 {
        return Err(HarnessError::Config("n and d must be positive".into()).into());
    }
    let ds = if imbalanced { synth_imbalanced(n, d, seed, positive_rate) } else { synth_binary(n, d, seed, separability) };
    std::fs::write(&out, write_libsvm(&ds)).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

/// Exit status and label for an error.
fn category(err: &anyhow::Error) -> (u8, &'static str) {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return (2, "config");
        }
        if let Some(h) = cause.downcast_ref::<HarnessError>() {
            return match h {
                HarnessError::Config(_) => (2, "config"),
                HarnessError::Data(_) | HarnessError::Loss(_) => (3, "data"),
                HarnessError::Reference(_) => (4, "reference"),
                HarnessError::Optim(_) => (5, "optimizer"),
                HarnessError::Csv { .. } => (3, "data"),
                HarnessError::Io(_) => (6, "io"),
            };
        }
        if cause.is::<DataError>() || cause.is::<LossError>() {
            return (3, "data");
        }
        if cause.is::<ReferenceError>() {
            return (4, "reference");
        }
        if cause.is::<OptimError>() {
            return (5, "optimizer");
        }
        if cause.is::<std::io::Error>() {
            return (6, "io");
        }
    }
    (1, "error")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(*args),
        Command::Plot { from, out } => plot(from, out),
        Command::Reference { data, lambda, tol, model, label_map, binary_labels, print_w } => {
            reference(data, lambda, tol, model, label_map, binary_labels, print_w)
        }
        Command::Synth { n, d, seed, imbalanced, separability, positive_rate, out } => {
            synth(n, d, seed, imbalanced, separability, positive_rate, out)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, label) = category(&e);
            eprintln!("error[{label}]: {e:#}");
            ExitCode::from(code)
        }
    }
}
