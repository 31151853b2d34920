//! Step-size schedules for the inner loop.
//!
//! * `Constant(η)`.
//! * `EpochBb`: `η_k = (1/m) · ‖Δw‖² / (Δwᵀ Δg)` over the last two anchors,
//!   held constant for the epoch.
//! * `GeneralizedBb`: `η_k^t = (ξ_T / m₁) · ‖Δw‖² / (Δwᵀ Δg)` with
//!   `T = k·m + t` and either a fixed `ξ = c₁` or the decay
//!   `ξ_T = c₁ / (1 + c₂ T)`.
//!
//! Epoch indices are 0-based here: epoch `k` runs from anchor `w̃_k`, and the
//! BB ratio exists from `k = 1` on. Before that both BB kinds use the
//! fallback `η₀` (scaled by `ξ_T / m₁` for the generalized step).

use thiserror::Error;

use crate::linalg;

#[derive(Debug, Error, PartialEq)]
pub enum StepError {
    #[error("non-positive curvature Δwᵀ Δg = {0:e}")]
    Curvature(f64),
    #[error("unknown preset '{0}' (expected M1|M2|M3)")]
    UnknownPreset(String),
    #[error("invalid step specification '{0}'")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum XiMode {
    Fixed { c1: f64 },
    Decay { c1: f64, c2: f64 },
}

impl XiMode {
    pub fn c1(self) -> f64 {
        match self {
            XiMode::Fixed { c1 } | XiMode::Decay { c1, .. } => c1,
        }
    }
}

/// `ξ_T`.
pub fn xi(mode: XiMode, t_global: u64) -> f64 {
    match mode {
        XiMode::Fixed { c1 } => c1,
        XiMode::Decay { c1, c2 } => c1 / (1.0 + c2 * t_global as f64),
    }
}

/// `(min, max)` of `ξ_T` over `T ∈ [0, t_max]`.
pub fn xi_bounds(mode: XiMode, t_max: u64) -> (f64, f64) {
    (xi(mode, t_max), xi(mode, 0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSizeSchedule {
    Constant { eta: f64 },
    EpochBb { eta0: f64 },
    GeneralizedBb { m1: f64, xi: XiMode, eta0: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BbsPreset {
    M1,
    M2,
    M3,
}

impl BbsPreset {
    pub fn name(self) -> &'static str {
        match self {
            BbsPreset::M1 => "M1",
            BbsPreset::M2 => "M2",
            BbsPreset::M3 => "M3",
        }
    }
}

impl std::str::FromStr for BbsPreset {
    type Err = StepError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "M1" => Ok(BbsPreset::M1),
            "M2" => Ok(BbsPreset::M2),
            "M3" => Ok(BbsPreset::M3),
            _ => Err(StepError::UnknownPreset(s.to_string())),
        }
    }
}

/// Generalized BB presets: M1 (`m₁ = 2n`, fixed ξ), M2 (`m₁ = n`, decay),
/// M3 (`m₁ = 1`, decay). Only `m₁` changes; the inner loop length does not.
pub fn preset(name: BbsPreset, n: usize, c1: f64, c2: f64, eta0: f64) -> StepSizeSchedule {
    let (m1, xi) = match name {
        BbsPreset::M1 => (2.0 * n as f64, XiMode::Fixed { c1 }),
        BbsPreset::M2 => (n as f64, XiMode::Decay { c1, c2 }),
        BbsPreset::M3 => (1.0, XiMode::Decay { c1, c2 }),
    };
    StepSizeSchedule::GeneralizedBb { m1, xi, eta0 }
}

/// The two most recent anchors and their full gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochAnchors {
    pub w_prev2: Vec<f64>,
    pub w_prev1: Vec<f64>,
    pub g_prev2: Vec<f64>,
    pub g_prev1: Vec<f64>,
}

impl EpochAnchors {
    /// `‖Δw‖² / (Δwᵀ Δg)`, an inverse curvature estimate.
    pub fn inverse_curvature(&self) -> Result<f64, StepError> {
        let dw = linalg::sub(&self.w_prev1, &self.w_prev2);
        let dg = linalg::sub(&self.g_prev1, &self.g_prev2);
        let curv = linalg::dot(&dw, &dg);
        if !(curv > 0.0) || !curv.is_finite() {
            return Err(StepError::Curvature(curv));
        }
        Ok(linalg::norm_sq(&dw) / curv)
    }
}

impl StepSizeSchedule {
    pub fn is_bb(&self) -> bool {
        !matches!(self, StepSizeSchedule::Constant { .. })
    }

    pub fn eta0(&self) -> f64 {
        match *self {
            StepSizeSchedule::Constant { eta } => eta,
            StepSizeSchedule::EpochBb { eta0 } | StepSizeSchedule::GeneralizedBb { eta0, .. } => eta0,
        }
    }

    /// Step for inner iteration `t` of epoch `k` given the epoch's inverse
    /// curvature (or `None` before two anchors exist).
    pub fn step_with_ratio(&self, ratio: Option<f64>, k: usize, t: usize, m: usize) -> f64 {
        match *self {
            StepSizeSchedule::Constant { eta } => eta,
            StepSizeSchedule::EpochBb { eta0 } => match ratio {
                Some(r) => r / m as f64,
                None => eta0,
            },
            StepSizeSchedule::GeneralizedBb { m1, xi: mode, eta0 } => {
                let t_global = (k as u64) * (m as u64) + t as u64;
                xi(mode, t_global) / m1 * ratio.unwrap_or(eta0)
            }
        }
    }

    /// Parses `constant:0.1`, `epochbb:0.01`, `m1:0.1`, `m2:0.1`, `m3:0.1`.
    /// BB kinds take `n`, `c₂` and `η₀` from the caller.
    pub fn parse(spec: &str, n: usize, c2: f64, eta0: f64) -> Result<Self, StepError> {
        let (kind, value) = spec.split_once(':').ok_or_else(|| StepError::Invalid(spec.into()))?;
        let value: f64 = value.parse().map_err(|_| StepError::Invalid(spec.into()))?;
        if !(value > 0.0 && value.is_finite()) {
            return Err(StepError::Invalid(spec.into()));
        }
        match kind.to_ascii_lowercase().as_str() {
            "constant" => Ok(StepSizeSchedule::Constant { eta: value }),
            "epochbb" => Ok(StepSizeSchedule::EpochBb { eta0: value }),
            other => Ok(preset(other.parse()?, n, value, c2, eta0)),
        }
    }
}

/// Step size for `(k, t)`. BB kinds need `anchors` from epoch 1 on.
pub fn step(
    schedule: &StepSizeSchedule,
    anchors: Option<&EpochAnchors>,
    k: usize,
    t: usize,
    m: usize,
) -> Result<f64, StepError> {
    let ratio = match (schedule.is_bb(), anchors) {
        (true, Some(a)) => Some(a.inverse_curvature()?),
        _ => None,
    };
    Ok(schedule.step_with_ratio(ratio, k, t, m))
}
