//! The variance-reduced epoch/inner-loop driver.
//!
//! Each epoch `k` (0-based) starts from anchor `w̃_k`:
//!
//! 1. `g̃ = ∇F(w̃_k)` (one data pass),
//! 2. build the method's correction `(Ã, Ã_i)`,
//! 3. run `m` steps `w_t = w_{t-1} - η_t v_t` with
//!    `v_t = ∇f_i(w_{t-1}) - ∇f_i(w̃) + g̃ + (Ã - Ã_i)(w_{t-1} - w̃)`,
//! 4. take the next anchor as `w_m` (option 1) or a uniformly drawn `w_t`,
//!    `t ∈ {0, …, m-1}` (option 2).
//!
//! Methods that need two anchors (secant correction or BB steps) run their
//! first epoch as plain SVRG with the schedule's fallback step.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::correction::{CorrectionError, CorrectionOperator, CorrectionVariant};
use crate::linalg;
use crate::losses::{LossError, LossModel};
use crate::stepsize::{BbsPreset, EpochAnchors, StepSizeSchedule};

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Correction(#[from] CorrectionError),
    #[error("iterate diverged in epoch {epoch} at inner step {step}")]
    Diverged { epoch: usize, step: usize, partial: Box<RunOutcome> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Svrg,
    Svrg2,
    Svrg2D,
    Svrg2Bb,
    Svrg2Bbs(BbsPreset),
    SvrgBb,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Svrg,
        Method::Svrg2,
        Method::Svrg2D,
        Method::Svrg2Bb,
        Method::Svrg2Bbs(BbsPreset::M1),
        Method::Svrg2Bbs(BbsPreset::M2),
        Method::Svrg2Bbs(BbsPreset::M3),
        Method::SvrgBb,
    ];

    pub fn correction(self) -> CorrectionVariant {
        match self {
            Method::Svrg | Method::SvrgBb => CorrectionVariant::None,
            Method::Svrg2 => CorrectionVariant::FullHessian,
            Method::Svrg2D => CorrectionVariant::DiagHessian,
            Method::Svrg2Bb | Method::Svrg2Bbs(_) => CorrectionVariant::BbScalar,
        }
    }

    pub fn name(self) -> String {
        match self {
            Method::Svrg => "SVRG".into(),
            Method::Svrg2 => "SVRG-2".into(),
            Method::Svrg2D => "SVRG-2D".into(),
            Method::Svrg2Bb => "SVRG-2BB".into(),
            Method::Svrg2Bbs(p) => format!("SVRG-2BBS-{}", p.name()),
            Method::SvrgBb => "SVRG-BB".into(),
        }
    }

    /// Whether `schedule` is the kind this method runs with.
    pub fn accepts(self, schedule: &StepSizeSchedule) -> bool {
        match self {
            Method::Svrg2Bbs(_) => matches!(schedule, StepSizeSchedule::GeneralizedBb { .. }),
            Method::SvrgBb => matches!(schedule, StepSizeSchedule::EpochBb { .. }),
            _ => matches!(schedule, StepSizeSchedule::Constant { .. }),
        }
    }

    /// Per-sample gradient evaluations of epoch `k` under the accounting used
    /// in [`EpochRecord::grad_evals`].
    pub fn grad_evals_per_epoch(self, n: usize, m: usize, k: usize) -> u64 {
        let base = (n + 2 * m) as u64;
        match self.correction() {
            CorrectionVariant::BbScalar if k >= 1 => base + 2 * m as u64,
            _ => base,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s.to_ascii_lowercase().chars().filter(|c| c.is_ascii_alphanumeric()).collect();
        match key.as_str() {
            "svrg" => Ok(Method::Svrg),
            "svrg2" => Ok(Method::Svrg2),
            "svrg2d" => Ok(Method::Svrg2D),
            "svrg2bb" => Ok(Method::Svrg2Bb),
            "svrg2bbsm1" | "m1" => Ok(Method::Svrg2Bbs(BbsPreset::M1)),
            "svrg2bbsm2" | "m2" => Ok(Method::Svrg2Bbs(BbsPreset::M2)),
            "svrg2bbsm3" | "m3" => Ok(Method::Svrg2Bbs(BbsPreset::M3)),
            "svrgbb" => Ok(Method::SvrgBb),
            _ => Err(format!("unknown method '{s}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AnchorOption {
    /// `w̃_k = w_m`.
    #[default]
    Last,
    /// `w̃_k = w_t` for `t` uniform in `{0, …, m-1}`.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VarianceProbe {
    Off,
    /// `‖v - ∇F(w)‖²` averaged over samples at the epoch's last inner iterate.
    #[default]
    LastIterate,
    /// Same quantity at the epoch's first inner iterate. Identically zero,
    /// since that iterate is the anchor.
    EpochStart,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub method: Method,
    pub schedule: StepSizeSchedule,
    pub epochs: usize,
    pub inner_len: usize,
    pub anchor_option: AnchorOption,
    pub seed: u64,
    pub delta_floor: f64,
    pub variance: VarianceProbe,
    /// Exact enumeration up to this many samples, sampled estimate above.
    pub variance_enum_cap: usize,
    pub variance_samples: usize,
    /// Keep each epoch's correction operator and last inner iterate.
    pub keep_snapshots: bool,
    /// Keep every anchor `w̃_0, …, w̃_K`.
    pub keep_anchors: bool,
}

impl RunConfig {
    /// Defaults: option 1 anchors, variance at the last inner iterate,
    /// `δ = 1e-8`.
    pub fn new(method: Method, schedule: StepSizeSchedule, epochs: usize, inner_len: usize) -> Self {
        Self {
            method,
            schedule,
            epochs,
            inner_len,
            anchor_option: AnchorOption::Last,
            seed: 0,
            delta_floor: 1e-8,
            variance: VarianceProbe::LastIterate,
            variance_enum_cap: 5000,
            variance_samples: 1024,
            keep_snapshots: false,
            keep_anchors: false,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        if self.inner_len == 0 {
            return Err(OptimError::Config("inner loop length m must be at least 1".into()));
        }
        if !self.method.accepts(&self.schedule) {
            return Err(OptimError::Config(format!(
                "{} cannot run with step schedule {:?}",
                self.method, self.schedule
            )));
        }
        let positive = |x: f64| x > 0.0 && x.is_finite();
        let ok = match self.schedule {
            StepSizeSchedule::Constant { eta } => positive(eta),
            StepSizeSchedule::EpochBb { eta0 } => positive(eta0),
            StepSizeSchedule::GeneralizedBb { m1, xi, eta0 } => {
                positive(m1) && positive(eta0) && positive(xi.c1())
            }
        };
        if !ok {
            return Err(OptimError::Config(format!("step parameters must be positive: {:?}", self.schedule)));
        }
        if !(self.delta_floor > 0.0) {
            return Err(OptimError::Config("delta floor must be positive".into()));
        }
        Ok(())
    }
}

/// Per-epoch telemetry.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch number; the record describes anchor `w̃_epoch`.
    pub epoch: usize,
    /// Cumulative algorithm time (full gradients, corrections, inner loops).
    pub wall_time_sec: f64,
    pub fval: f64,
    pub gap: Option<f64>,
    pub variance: Option<f64>,
    /// Step used at the epoch's last inner iteration.
    pub step_size: f64,
    /// Cumulative per-sample gradient evaluations.
    pub grad_evals: u64,
}

#[derive(Debug, Clone)]
pub struct EpochSnapshot {
    pub correction: CorrectionOperator,
    pub anchor_grad: Vec<f64>,
    pub last_iterate: Vec<f64>,
}

/// In-memory extras that do not go to CSV.
#[derive(Debug, Clone)]
pub struct EpochDetail {
    pub bb_curvature_raw: Option<f64>,
    pub step_min: f64,
    pub step_max: f64,
    /// Samples behind the variance value (`n` when enumerated exactly).
    pub variance_samples: usize,
    pub snapshot: Option<EpochSnapshot>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub w_final: Vec<f64>,
    pub initial_fval: f64,
    pub records: Vec<EpochRecord>,
    pub details: Vec<EpochDetail>,
    pub anchors: Vec<Vec<f64>>,
    /// Epochs where the BB step hit non-positive curvature and reused an
    /// earlier value.
    pub curvature_fallbacks: usize,
    /// Epochs where coinciding anchors forced the correction to zero.
    pub degenerate_anchors: usize,
}

/// `v_t` for sample `i`, written into `out`. `u` and `scratch` are work
/// buffers of length `d`.
#[inline]
fn direction_into(
    model: &LossModel,
    correction: &CorrectionOperator,
    w_curr: &[f64],
    w_anchor: &[f64],
    g_anchor: &[f64],
    i: usize,
    out: &mut [f64],
    u: &mut [f64],
    scratch: &mut [f64],
) {
    let a = &model.data().samples()[i];
    let dc = model.grad_coef(i, a.dot(w_curr)) - model.grad_coef(i, a.dot(w_anchor));
    let lambda = model.lambda();
    for ((o, ((uj, wc), wa)), g) in out.iter_mut().zip(u.iter_mut().zip(w_curr).zip(w_anchor)).zip(g_anchor) {
        *uj = wc - wa;
        *o = g + lambda * *uj;
    }
    a.axpy_into(dc, out);
    correction.add_correction(model, i, u, out, scratch);
}

/// The variance-reduced direction
/// `∇f_i(w) - ∇f_i(w̃) + g̃ + (Ã - Ã_i)(w - w̃)`.
pub fn direction(
    model: &LossModel,
    correction: &CorrectionOperator,
    w_curr: &[f64],
    w_anchor: &[f64],
    g_anchor: &[f64],
    i: usize,
) -> Result<Vec<f64>, OptimError> {
    let d = model.dim();
    for v in [w_curr, w_anchor, g_anchor, correction.anchor()] {
        if v.len() != d {
            return Err(LossError::Dimension { expected: d, got: v.len() }.into());
        }
    }
    if i >= model.n() {
        return Err(LossError::SampleIndex { index: i, n: model.n() }.into());
    }
    let mut out = vec![0.0; d];
    let mut u = vec![0.0; d];
    let mut scratch = vec![0.0; d];
    direction_into(model, correction, w_curr, w_anchor, g_anchor, i, &mut out, &mut u, &mut scratch);
    Ok(out)
}

/// Exact `(1/n) Σ_i ‖v_i - ∇F(w)‖²`.
pub fn measure_variance(
    model: &LossModel,
    correction: &CorrectionOperator,
    w_curr: &[f64],
    w_anchor: &[f64],
    g_anchor: &[f64],
) -> Result<f64, OptimError> {
    let indices: Vec<usize> = (0..model.n()).collect();
    variance_over(model, correction, w_curr, w_anchor, g_anchor, &indices)
}

/// Unbiased estimate of the same quantity from `samples` uniform draws.
pub fn measure_variance_sampled(
    model: &LossModel,
    correction: &CorrectionOperator,
    w_curr: &[f64],
    w_anchor: &[f64],
    g_anchor: &[f64],
    samples: usize,
    rng: &mut impl Rng,
) -> Result<f64, OptimError> {
    let indices: Vec<usize> = (0..samples.max(1)).map(|_| rng.random_range(0..model.n())).collect();
    variance_over(model, correction, w_curr, w_anchor, g_anchor, &indices)
}

fn variance_over(
    model: &LossModel,
    correction: &CorrectionOperator,
    w_curr: &[f64],
    w_anchor: &[f64],
    g_anchor: &[f64],
    indices: &[usize],
) -> Result<f64, OptimError> {
    let full = model.grad_full(w_curr)?;
    let d = model.dim();
    if w_anchor.len() != d || g_anchor.len() != d {
        return Err(LossError::Dimension { expected: d, got: w_anchor.len().min(g_anchor.len()) }.into());
    }
    let (mut v, mut u, mut scratch) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let mut total = 0.0;
    for &i in indices {
        direction_into(model, correction, w_curr, w_anchor, g_anchor, i, &mut v, &mut u, &mut scratch);
        total += linalg::dist_sq(&v, &full);
    }
    Ok(total / indices.len() as f64)
}

/// Step-size state for one epoch: the BB inverse curvature, if any.
#[derive(Debug, Clone, Copy)]
pub struct EpochStepState {
    pub k: usize,
    pub ratio: Option<f64>,
}

/// Result of one epoch's inner loop.
#[derive(Debug, Clone)]
pub struct EpochTrace {
    pub next_anchor: Vec<f64>,
    pub last_iterate: Vec<f64>,
    pub step_last: f64,
    pub step_min: f64,
    pub step_max: f64,
}

/// Runs the `m` inner steps of one epoch from `w_anchor`.
pub fn run_epoch(
    model: &LossModel,
    config: &RunConfig,
    correction: &CorrectionOperator,
    steps: EpochStepState,
    w_anchor: &[f64],
    g_anchor: &[f64],
    rng: &mut ChaCha8Rng,
    divergence_limit: f64,
) -> Result<EpochTrace, (usize, EpochTrace)> {
    let d = model.dim();
    let n = model.n();
    let m = config.inner_len;
    let pick = match config.anchor_option {
        AnchorOption::Last => None,
        AnchorOption::Random => Some(rng.random_range(0..m)),
    };
    let mut w = w_anchor.to_vec();
    let mut picked = None;
    let (mut v, mut u, mut scratch) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let (mut step_min, mut step_max, mut step_last) = (f64::INFINITY, 0.0f64, 0.0);

    for t in 0..m {
        if pick == Some(t) {
            picked = Some(w.clone());
        }
        let i = rng.random_range(0..n);
        let eta = config.schedule.step_with_ratio(steps.ratio, steps.k, t, m);
        step_min = step_min.min(eta);
        step_max = step_max.max(eta);
        step_last = eta;
        direction_into(model, correction, &w, w_anchor, g_anchor, i, &mut v, &mut u, &mut scratch);
        linalg::axpy(-eta, &v, &mut w);
        let norm = linalg::norm(&w);
        if !(norm <= divergence_limit) {
            let trace = EpochTrace {
                next_anchor: w.clone(),
                last_iterate: w,
                step_last,
                step_min,
                step_max,
            };
            return Err((t + 1, trace));
        }
    }
    let next_anchor = picked.unwrap_or_else(|| w.clone());
    Ok(EpochTrace { next_anchor, last_iterate: w, step_last, step_min, step_max })
}

/// Runs `config.epochs` epochs from `w0`. `f_star` enables the gap column.
pub fn optimize(
    model: &LossModel,
    config: &RunConfig,
    w0: &[f64],
    f_star: Option<f64>,
) -> Result<RunOutcome, OptimError> {
    config.validate()?;
    if w0.len() != model.dim() {
        return Err(LossError::Dimension { expected: model.dim(), got: w0.len() }.into());
    }
    if !linalg::all_finite(w0) {
        return Err(OptimError::Config("initial point is not finite".into()));
    }
    let n = model.n();
    let m = config.inner_len;
    let divergence_limit = 1e8 * (1.0 + linalg::norm(w0));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut telemetry_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9E37_79B9_7F4A_7C15);

    let mut out = RunOutcome {
        w_final: w0.to_vec(),
        initial_fval: model.value(w0)?,
        records: Vec::with_capacity(config.epochs),
        details: Vec::with_capacity(config.epochs),
        anchors: if config.keep_anchors { vec![w0.to_vec()] } else { Vec::new() },
        curvature_fallbacks: 0,
        degenerate_anchors: 0,
    };

    let mut anchor = w0.to_vec();
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut last_ratio: Option<f64> = None;
    let mut elapsed = 0.0;
    let mut grad_evals: u64 = 0;

    for k in 0..config.epochs {
        let clock = Instant::now();
        let g_anchor = model.grad_full(&anchor)?;
        grad_evals += n as u64;

        let prev_ref = prev.as_ref().map(|(w, g)| (w.as_slice(), g.as_slice()));
        let correction = match CorrectionOperator::build_with_gradients(
            config.method.correction(),
            model,
            &anchor,
            &g_anchor,
            prev_ref,
            config.delta_floor,
        ) {
            Ok(op) => op,
            Err(CorrectionError::DegenerateAnchor) => {
                out.degenerate_anchors += 1;
                CorrectionOperator::none(&anchor)
            }
            Err(e) => return Err(e.into()),
        };
        let secant_active = correction.variant() == CorrectionVariant::BbScalar;

        let ratio = match (&prev, config.schedule.is_bb()) {
            (Some((wp, gp)), true) => {
                let anchors = EpochAnchors {
                    w_prev2: wp.clone(),
                    w_prev1: anchor.clone(),
                    g_prev2: gp.clone(),
                    g_prev1: g_anchor.clone(),
                };
                match anchors.inverse_curvature() {
                    Ok(r) => {
                        last_ratio = Some(r);
                        Some(r)
                    }
                    Err(_) => {
                        out.curvature_fallbacks += 1;
                        last_ratio
                    }
                }
            }
            _ => None,
        };

        let trace = run_epoch(
            model,
            config,
            &correction,
            EpochStepState { k, ratio },
            &anchor,
            &g_anchor,
            &mut rng,
            divergence_limit,
        );
        grad_evals += 2 * m as u64;
        if secant_active {
            grad_evals += 2 * m as u64;
        }
        elapsed += clock.elapsed().as_secs_f64();

        let trace = match trace {
            Ok(t) => t,
            Err((step, t)) => {
                out.w_final = t.last_iterate;
                return Err(OptimError::Diverged { epoch: k + 1, step, partial: Box::new(out) });
            }
        };

        let fval = model.value(&trace.next_anchor)?;
        if !fval.is_finite() {
            out.w_final = trace.next_anchor;
            return Err(OptimError::Diverged { epoch: k + 1, step: m, partial: Box::new(out) });
        }
        let (variance, variance_samples) = match config.variance {
            VarianceProbe::Off => (None, 0),
            probe => {
                let at = match probe {
                    VarianceProbe::EpochStart => &anchor,
                    _ => &trace.last_iterate,
                };
                if n <= config.variance_enum_cap {
                    (Some(measure_variance(model, &correction, at, &anchor, &g_anchor)?), n)
                } else {
                    let v = measure_variance_sampled(
                        model,
                        &correction,
                        at,
                        &anchor,
                        &g_anchor,
                        config.variance_samples,
                        &mut telemetry_rng,
                    )?;
                    (Some(v), config.variance_samples)
                }
            }
        };

        out.records.push(EpochRecord {
            epoch: k + 1,
            wall_time_sec: elapsed,
            fval,
            gap: f_star.map(|f| fval - f),
            variance,
            step_size: trace.step_last,
            grad_evals,
        });
        out.details.push(EpochDetail {
            bb_curvature_raw: correction.bb_curvature_raw(),
            step_min: trace.step_min,
            step_max: trace.step_max,
            variance_samples,
            snapshot: config.keep_snapshots.then(|| EpochSnapshot {
                correction: correction.clone(),
                anchor_grad: g_anchor.clone(),
                last_iterate: trace.last_iterate.clone(),
            }),
        });
        if config.keep_anchors {
            out.anchors.push(trace.next_anchor.clone());
        }
        prev = Some((std::mem::replace(&mut anchor, trace.next_anchor), g_anchor));
    }
    out.w_final = anchor;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_binary;
    use crate::losses::LossKind;
    use std::sync::Arc;

    fn model() -> LossModel {
        LossModel::new(Arc::new(synth_binary(50, 4, 5, 0.8)), 0.05, LossKind::Logistic).unwrap()
    }

    #[test]
    fn zero_displacement_gives_anchor_gradient() {
        let m = model();
        let anchor = [0.2, -0.1, 0.4, 0.3];
        let prev = [0.0, 0.1, 0.1, 0.0];
        let g = m.grad_full(&anchor).unwrap();
        for variant in [
            CorrectionVariant::None,
            CorrectionVariant::FullHessian,
            CorrectionVariant::DiagHessian,
            CorrectionVariant::BbScalar,
        ] {
            let op = CorrectionOperator::build(variant, &m, &anchor, Some(&prev), 1e-8).unwrap();
            for i in 0..m.n() {
                assert_eq!(direction(&m, &op, &anchor, &anchor, &g, i).unwrap(), g);
            }
            assert_eq!(measure_variance(&m, &op, &anchor, &anchor, &g).unwrap(), 0.0);
        }
    }

    #[test]
    fn config_validation() {
        let bad = RunConfig::new(Method::Svrg, StepSizeSchedule::Constant { eta: 0.1 }, 1, 0);
        assert!(matches!(bad.validate(), Err(OptimError::Config(_))));
        let bad = RunConfig::new(Method::SvrgBb, StepSizeSchedule::Constant { eta: 0.1 }, 1, 5);
        assert!(matches!(bad.validate(), Err(OptimError::Config(_))));
        let bad = RunConfig::new(Method::Svrg, StepSizeSchedule::Constant { eta: -0.1 }, 1, 5);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_epochs_returns_start() {
        let m = model();
        let cfg = RunConfig::new(Method::Svrg, StepSizeSchedule::Constant { eta: 0.1 }, 0, 10);
        let out = optimize(&m, &cfg, &[0.5; 4], None).unwrap();
        assert_eq!(out.w_final, vec![0.5; 4]);
        assert!(out.records.is_empty());
    }

    #[test]
    fn huge_step_diverges_with_partial_records() {
        let m = model();
        let cfg = RunConfig::new(Method::Svrg, StepSizeSchedule::Constant { eta: 1e12 }, 3, 100);
        match optimize(&m, &cfg, &[1.0; 4], None) {
            Err(OptimError::Diverged { epoch, partial, .. }) => {
                assert_eq!(epoch, 1);
                assert!(partial.records.is_empty());
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn method_names_round_trip() {
        for method in Method::ALL {
            assert_eq!(method.name().parse::<Method>().unwrap(), method);
        }
        assert!("sag".parse::<Method>().is_err());
    }

    #[test]
    fn option_two_picks_an_inner_iterate() {
        let m = model();
        let mut cfg = RunConfig::new(Method::Svrg, StepSizeSchedule::Constant { eta: 0.5 }, 4, 30).with_seed(3);
        cfg.anchor_option = AnchorOption::Random;
        cfg.keep_snapshots = true;
        let out = optimize(&m, &cfg, &[0.0; 4], None).unwrap();
        assert_eq!(out.records.len(), 4);
        // the chosen anchor generally differs from the last iterate
        let differs = out
            .details
            .windows(2)
            .any(|w| w[1].snapshot.as_ref().unwrap().correction.anchor() != w[0].snapshot.as_ref().unwrap().last_iterate);
        assert!(differs);
    }
}
