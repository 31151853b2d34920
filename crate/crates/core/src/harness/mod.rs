//! Experiment driver: grid search over step parameters for every
//! `(method, λ)` cell, reference solves, CSV telemetry and SVG plots.

mod config;
mod csv;
mod plot;

pub use config::{parse_config, ConfigError};
pub use csv::{emit_csv, read_index, read_run_csv, run_csv_string, IndexEntry, RUN_HEADER};
pub use plot::{emit_plots, plots_from_dir, render_svg, PlotReport, PlotSeries};

use std::path::PathBuf;
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::data::{load_libsvm, synth_binary, synth_imbalanced, DataError, LabelRule, ParseOptions, SparseDataset};
use crate::losses::{LossError, LossKind, LossModel};
use crate::optimizer::{optimize, AnchorOption, EpochRecord, Method, OptimError, RunConfig, VarianceProbe};
use crate::reference::{solve_reference, ReferenceCache, ReferenceError, ReferenceOptions};
use crate::stepsize::{preset, StepSizeSchedule};

/// Step grid `{10⁰, …, 10⁻⁵}`.
pub const DEFAULT_GRID: [f64; 6] = [1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Reference(#[from] ReferenceError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("{path}: line {line}: {msg}")]
    Csv { path: PathBuf, line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Libsvm { path: PathBuf, labels: LabelRule, dim: Option<usize> },
    Synth { n: usize, d: usize, seed: u64, separability: f64 },
    /// See [`crate::data::synth_imbalanced`].
    Imbalanced { n: usize, d: usize, seed: u64, positive_rate: f64 },
}

impl DataSource {
    /// Parses `n,d,seed` for a synthetic source.
    pub fn parse_synth(text: &str, separability: f64) -> Result<Self, HarnessError> {
        let parts: Vec<&str> = text.split(',').map(str::trim).collect();
        let bad = || HarnessError::Config(format!("--synth expects n,d,seed, got '{text}'"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let n = parts[0].parse().map_err(|_| bad())?;
        let d = parts[1].parse().map_err(|_| bad())?;
        let seed = parts[2].parse().map_err(|_| bad())?;
        if n == 0 || d == 0 {
            return Err(bad());
        }
        Ok(DataSource::Synth { n, d, seed, separability })
    }

    pub fn default_name(&self) -> String {
        match self {
            DataSource::Libsvm { path, .. } => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "data".into()),
            DataSource::Synth { n, d, seed, .. } => format!("synth-n{n}-d{d}-s{seed}"),
            DataSource::Imbalanced { n, d, seed, .. } => format!("imbalanced-n{n}-d{d}-s{seed}"),
        }
    }

    pub fn load(&self) -> Result<SparseDataset, HarnessError> {
        match self {
            DataSource::Libsvm { path, labels, dim } => {
                Ok(load_libsvm(path, &ParseOptions { labels: labels.clone(), dim: *dim })?)
            }
            DataSource::Synth { n, d, seed, separability } => Ok(synth_binary(*n, *d, *seed, *separability)),
            DataSource::Imbalanced { n, d, seed, positive_rate } => {
                Ok(synth_imbalanced(*n, *d, *seed, *positive_rate))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub name: String,
    pub data: DataSource,
    /// Keep only the first this many samples.
    pub subsample: Option<usize>,
    /// Per-feature max-abs scaling.
    pub scale: bool,
    pub model: LossKind,
    pub lambdas: Vec<f64>,
    pub methods: Vec<Method>,
    /// Step parameter grid (η, η₀ or c₁ depending on the method).
    pub grid: Vec<f64>,
    /// Explicit `kind:value` steps; a method with matching entries uses them
    /// instead of the grid.
    pub steps: Vec<String>,
    pub epochs: usize,
    /// Inner loop length; `None` means `2n`.
    pub inner_len: Option<usize>,
    pub seeds: Vec<u64>,
    pub out_dir: Option<PathBuf>,
    pub ref_tol: f64,
    pub anchor_option: AnchorOption,
    pub variance: VarianceProbe,
    pub variance_enum_cap: usize,
    pub parallel: bool,
    pub cache_dir: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn new(data: DataSource, model: LossKind) -> Self {
        Self {
            name: data.default_name(),
            data,
            subsample: None,
            scale: false,
            model,
            lambdas: vec![1e-3],
            methods: vec![Method::Svrg, Method::Svrg2Bb],
            grid: DEFAULT_GRID.to_vec(),
            steps: Vec::new(),
            epochs: 30,
            inner_len: None,
            seeds: vec![0],
            out_dir: None,
            ref_tol: 1e-11,
            anchor_option: AnchorOption::Last,
            variance: VarianceProbe::LastIterate,
            variance_enum_cap: 5000,
            parallel: true,
            cache_dir: None,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let err = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.name.is_empty() || self.name.contains([',', '\n', ';']) {
            return err("experiment name must be non-empty without commas, semicolons or newlines");
        }
        if self.methods.is_empty() {
            return err("method list is empty");
        }
        if self.lambdas.is_empty() {
            return err("lambda list is empty");
        }
        if self.seeds.is_empty() {
            return err("seed list is empty");
        }
        if self.grid.is_empty() || self.grid.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
            return err("grid values must be positive");
        }
        if self.lambdas.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return err("lambda values must be positive");
        }
        if self.inner_len == Some(0) {
            return err("inner loop length must be at least 1");
        }
        if !(self.ref_tol > 0.0) {
            return err("reference tolerance must be positive");
        }
        Ok(())
    }

    /// Step parameters tried for `method`.
    pub fn params_for(&self, method: Method) -> Result<Vec<f64>, HarnessError> {
        let family = step_family(method);
        let mut explicit = Vec::new();
        for s in &self.steps {
            let (kind, value) = s
                .split_once(':')
                .ok_or_else(|| HarnessError::Config(format!("step '{s}' is not kind:value")))?;
            let kind = kind.to_ascii_lowercase();
            if !["constant", "epochbb", "m1", "m2", "m3"].contains(&kind.as_str()) {
                return Err(HarnessError::Config(format!("unknown step kind '{kind}'")));
            }
            if kind == family {
                let v: f64 = value
                    .parse()
                    .map_err(|_| HarnessError::Config(format!("bad step value in '{s}'")))?;
                if !(v > 0.0 && v.is_finite()) {
                    return Err(HarnessError::Config(format!("step value must be positive in '{s}'")));
                }
                explicit.push(v);
            }
        }
        Ok(if explicit.is_empty() { self.grid.clone() } else { explicit })
    }
}

fn step_family(method: Method) -> &'static str {
    match method {
        Method::SvrgBb => "epochbb",
        Method::Svrg2Bbs(p) => match p {
            crate::stepsize::BbsPreset::M1 => "m1",
            crate::stepsize::BbsPreset::M2 => "m2",
            crate::stepsize::BbsPreset::M3 => "m3",
        },
        _ => "constant",
    }
}

/// Schedule for `method` with grid value `param` on `model`.
///
/// Generalized BB steps use `η₀ = 1/L` both as the first-epoch inverse
/// curvature and in the decay rate `c₂ = η₀λ`.
pub fn schedule_for(method: Method, param: f64, model: &LossModel) -> StepSizeSchedule {
    match method {
        Method::SvrgBb => StepSizeSchedule::EpochBb { eta0: param },
        Method::Svrg2Bbs(p) => {
            let eta0 = 1.0 / model.smoothness();
            preset(p, model.n(), param, eta0 * model.lambda(), eta0)
        }
        _ => StepSizeSchedule::Constant { eta: param },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub method: Method,
    pub lambda: f64,
    pub param: f64,
    pub seed: u64,
    pub records: Vec<EpochRecord>,
    pub diverged: bool,
}

impl RunRow {
    /// Last recorded gap; diverged or empty runs count as `+∞`.
    pub fn final_gap(&self) -> f64 {
        if self.diverged {
            return f64::INFINITY;
        }
        self.records.last().and_then(|r| r.gap).unwrap_or(f64::INFINITY)
    }

    pub fn file_name(&self) -> String {
        let method: String = self.method.name().chars().filter(|c| c.is_ascii_alphanumeric()).collect();
        format!("{method}_lam{:e}_p{:e}_s{}.csv", self.lambda, self.param, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub lambda: f64,
    pub f_star: f64,
    pub reference_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Winner {
    pub method: Method,
    pub lambda: f64,
    pub param: f64,
    /// Mean final gap over seeds.
    pub final_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub dataset: String,
    pub model: LossKind,
    pub n: usize,
    pub inner_len: usize,
    pub cells: Vec<Cell>,
    pub rows: Vec<RunRow>,
    pub winners: Vec<Winner>,
    /// `(λ, diagnostic)` for cells whose reference solve failed.
    pub skipped: Vec<(f64, String)>,
}

impl ResultTable {
    pub fn winner(&self, method: Method, lambda: f64) -> Option<&Winner> {
        self.winners.iter().find(|w| w.method == method && w.lambda == lambda)
    }

    /// Rows of the winning grid point for `(method, λ)`.
    pub fn winner_rows(&self, method: Method, lambda: f64) -> Vec<&RunRow> {
        match self.winner(method, lambda) {
            Some(w) => self
                .rows
                .iter()
                .filter(|r| r.method == method && r.lambda == lambda && r.param == w.param)
                .collect(),
            None => Vec::new(),
        }
    }
}

/// Loads the experiment's dataset with subsampling and scaling applied.
pub fn load_dataset(spec: &ExperimentSpec) -> Result<SparseDataset, HarnessError> {
    let mut ds = spec.data.load()?;
    if let Some(k) = spec.subsample {
        ds = ds.head(k);
    }
    if spec.scale {
        ds = ds.scale_max_abs();
    }
    Ok(ds)
}

/// Runs the whole grid. Output files are written when `spec.out_dir` is set.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ResultTable, HarnessError> {
    spec.validate()?;
    let data = Arc::new(load_dataset(spec)?);
    let n = data.n();
    let m = spec.inner_len.unwrap_or(2 * n);
    let cache = spec.cache_dir.clone().map(ReferenceCache::new).or_else(ReferenceCache::from_env);
    let ref_opts = ReferenceOptions { tol: spec.ref_tol, ..Default::default() };

    let mut table = ResultTable {
        dataset: spec.name.clone(),
        model: spec.model,
        n,
        inner_len: m,
        cells: Vec::new(),
        rows: Vec::new(),
        winners: Vec::new(),
        skipped: Vec::new(),
    };

    for &lambda in &spec.lambdas {
        let model = LossModel::new(data.clone(), lambda, spec.model)?;
        let reference = match &cache {
            Some(c) => c.solve(&model, &ref_opts),
            None => solve_reference(&model, &ref_opts),
        };
        let reference = match reference {
            Ok(r) => r,
            Err(e @ ReferenceError::NotConverged(_)) => {
                table.skipped.push((lambda, e.to_string()));
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        table.cells.push(Cell { lambda, f_star: reference.f_star, reference_iterations: reference.iterations });

        let mut jobs = Vec::new();
        for &method in &spec.methods {
            for param in spec.params_for(method)? {
                for &seed in &spec.seeds {
                    jobs.push((method, param, seed));
                }
            }
        }
        let run = |&(method, param, seed): &(Method, f64, u64)| -> Result<RunRow, HarnessError> {
            let mut cfg = RunConfig::new(method, schedule_for(method, param, &model), spec.epochs, m).with_seed(seed);
            cfg.anchor_option = spec.anchor_option;
            cfg.variance = spec.variance;
            cfg.variance_enum_cap = spec.variance_enum_cap;
            cfg.delta_floor = crate::correction::default_delta_floor(&model);
            let w0 = vec![0.0; model.dim()];
            let (records, diverged) = match optimize(&model, &cfg, &w0, Some(reference.f_star)) {
                Ok(out) => (out.records, false),
                Err(OptimError::Diverged { partial, .. }) => (partial.records, true),
                Err(e) => return Err(e.into()),
            };
            Ok(RunRow { method, lambda, param, seed, records, diverged })
        };
        let rows: Vec<RunRow> = if spec.parallel {
            jobs.par_iter().map(run).collect::<Result<_, _>>()?
        } else {
            jobs.iter().map(run).collect::<Result<_, _>>()?
        };

        for &method in &spec.methods {
            let mut best: Option<Winner> = None;
            for param in spec.params_for(method)? {
                let gaps: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.method == method && r.param == param)
                    .map(RunRow::final_gap)
                    .collect();
                let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
                let better = match &best {
                    None => true,
                    Some(b) => mean < b.final_gap || (b.final_gap.is_nan() && !mean.is_nan()),
                };
                if better {
                    best = Some(Winner { method, lambda, param, final_gap: mean });
                }
            }
            table.winners.extend(best);
        }
        table.rows.extend(rows);
    }

    if let Some(dir) = &spec.out_dir {
        emit_csv(&table, dir)?;
        emit_plots(&table, &dir.join("plots"))?;
        write_metadata(spec, &table, dir)?;
    }
    Ok(table)
}

fn write_metadata(spec: &ExperimentSpec, table: &ResultTable, dir: &std::path::Path) -> Result<(), HarnessError> {
    use std::fmt::Write as _;
    let mut s = String::new();
    writeln!(s, "dataset = {}", table.dataset).unwrap();
    writeln!(s, "model = {}", table.model.name()).unwrap();
    writeln!(s, "n = {}", table.n).unwrap();
    writeln!(s, "inner_len = {}", table.inner_len).unwrap();
    writeln!(s, "epochs = {}", spec.epochs).unwrap();
    writeln!(s, "anchor_option = {:?}", spec.anchor_option).unwrap();
    writeln!(s, "variance_point = {:?}", spec.variance).unwrap();
    let exact = table.n <= spec.variance_enum_cap;
    writeln!(
        s,
        "variance_estimator = {}",
        if exact { "exact enumeration".to_string() } else { "1024-sample estimate".to_string() }
    )
    .unwrap();
    writeln!(s, "first_epoch = plain SVRG direction and fallback step for history-dependent methods").unwrap();
    writeln!(s, "bbs_fallback_eta0 = 1/L; c2 = eta0 * lambda").unwrap();
    writeln!(s, "winner_rule = minimum mean final gap over seeds").unwrap();
    writeln!(s, "reference_tol = {:e}", spec.ref_tol).unwrap();
    for c in &table.cells {
        writeln!(s, "f_star[lambda={:e}] = {:e} ({} iterations)", c.lambda, c.f_star, c.reference_iterations)
            .unwrap();
    }
    for (lambda, why) in &table.skipped {
        writeln!(s, "skipped[lambda={lambda:e}] = {why}").unwrap();
    }
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("meta.txt"), s)?;
    Ok(())
}
