//! Closed-form linear-rate constants and empirical checks of their
//! assumptions.
//!
//! All rates depend on `μ` (strong convexity), `L` (component smoothness),
//! the step size, the epoch length `m`, and a constant `α` bounding the
//! corrected residual:
//!
//! `E‖∇f_i(w) - ∇f_i(w̃) - Ã_i(w - w̃)‖² ≤ α · E‖∇f_i(w) - ∇f_i(w̃)‖²`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::correction::CorrectionOperator;
use crate::linalg;
use crate::losses::LossModel;

#[derive(Debug, Error, PartialEq)]
pub enum TheoryError {
    #[error("strong convexity modulus must be positive")]
    ZeroMu,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemConstants {
    pub mu: f64,
    pub l: f64,
    /// Hessian Lipschitz constant `L̃`.
    pub l_tilde: f64,
    /// Bound `M ≥ ‖w - w̃‖²` over the inner iterates.
    pub m_bound: f64,
}

impl ProblemConstants {
    /// `μ = λ` and `L = max_i L_i` from the model; `L̃` and `M` start at zero.
    pub fn from_model(model: &LossModel) -> Self {
        Self { mu: model.strong_convexity(), l: model.smoothness(), l_tilde: 0.0, m_bound: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateEstimate {
    pub alpha: f64,
    pub rate: f64,
    pub feasible: bool,
    /// Step bounds `(η₀, η₁)` for BB steps, otherwise the fixed step twice.
    pub eta_lower: f64,
    pub eta_upper: f64,
}

/// `α = L̃² M / (4μ²)` for the exact-Hessian correction.
pub fn alpha_svrg2(c: &ProblemConstants) -> Result<f64, TheoryError> {
    if !(c.mu > 0.0) {
        return Err(TheoryError::ZeroMu);
    }
    Ok(c.l_tilde * c.l_tilde * c.m_bound / (4.0 * c.mu * c.mu))
}

/// `α = 4L² / μ` for the secant and diagonal corrections.
pub fn alpha_bb_diag(c: &ProblemConstants) -> Result<f64, TheoryError> {
    if !(c.mu > 0.0) {
        return Err(TheoryError::ZeroMu);
    }
    Ok(4.0 * c.l * c.l / c.mu)
}

/// Function-value rate with random-iterate anchors:
/// `β = 1/(μη(1 - ηL(2α+1))m) + 2Lηα/(1 - ηL(2α+1))`.
pub fn rate_random_anchor(mu: f64, l: f64, alpha: f64, eta: f64, m: usize) -> RateEstimate {
    let denom = 1.0 - eta * l * (2.0 * alpha + 1.0);
    let rate = if denom > 0.0 && eta > 0.0 {
        1.0 / (mu * eta * denom * m as f64) + 2.0 * l * eta * alpha / denom
    } else {
        f64::INFINITY
    };
    RateEstimate { alpha, rate, feasible: denom > 0.0 && rate < 1.0, eta_lower: eta, eta_upper: eta }
}

/// Iterate-distance rate with last-iterate anchors:
/// `γ = (1 - 2ημ(1 - ηL(2α+1)))^m + 2αηL²/(μ(1 - ηL(2α+1)))`.
pub fn rate_last_anchor(mu: f64, l: f64, alpha: f64, eta: f64, m: usize) -> RateEstimate {
    let est = gamma_tilde(mu, l, alpha, eta, eta, m);
    RateEstimate { eta_lower: eta, eta_upper: eta, ..est }
}

/// Rate for BB steps `η ∈ [η₀, η₁]` with `η₀ = ξ₀/(m₁L)`, `η₁ = ξ₁/(m₁μ)`:
/// `γ̃ = (1 - 2η₀μ(1 - η₁L(2α+1)))^m + 2αη₁²L²/(η₀μ(1 - η₁L(2α+1)))`.
pub fn rate_bb_steps(mu: f64, l: f64, alpha: f64, xi0: f64, xi1: f64, m1: f64, m: usize) -> RateEstimate {
    let eta0 = xi0 / (m1 * l);
    let eta1 = xi1 / (m1 * mu);
    gamma_tilde(mu, l, alpha, eta0, eta1, m)
}

fn gamma_tilde(mu: f64, l: f64, alpha: f64, eta0: f64, eta1: f64, m: usize) -> RateEstimate {
    let denom = 1.0 - eta1 * l * (2.0 * alpha + 1.0);
    let q = 1.0 - 2.0 * eta0 * mu * denom;
    let rate = if denom > 0.0 && eta0 > 0.0 {
        q.powi(m as i32) + 2.0 * alpha * eta1 * eta1 * l * l / (eta0 * mu * denom)
    } else if denom > 0.0 {
        // η₀ = 0: no progress, the variance term vanishes with the step
        q.powi(m as i32)
    } else {
        f64::INFINITY
    };
    let feasible = denom > 0.0 && (0.0..1.0).contains(&q) && rate < 1.0;
    RateEstimate { alpha, rate, feasible, eta_lower: eta0, eta_upper: eta1 }
}

/// `(Σ_i ‖r_i‖², Σ_i ‖d_i‖²)` with `d_i = ∇f_i(w) - ∇f_i(w̃)` and
/// `r_i = d_i - Ã_i(w - w̃)`.
pub fn residual_moments(model: &LossModel, correction: &CorrectionOperator, w: &[f64]) -> (f64, f64) {
    let anchor = correction.anchor();
    let u = linalg::sub(w, anchor);
    let d = model.dim();
    let (mut gw, mut ga, mut corr) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let (mut lhs, mut rhs) = (0.0, 0.0);
    for i in 0..model.n() {
        model.grad_sample_into(i, w, &mut gw);
        model.grad_sample_into(i, anchor, &mut ga);
        correction.apply_sample_into(model, i, &u, &mut corr);
        for j in 0..d {
            let diff = gw[j] - ga[j];
            rhs += diff * diff;
            let r = diff - corr[j];
            lhs += r * r;
        }
    }
    (lhs, rhs)
}

/// Largest observed ratio `E‖r_i‖² / E‖d_i‖²` over `points`, each taken
/// against the correction's anchor. Points with a zero denominator are
/// skipped; `None` if all are.
pub fn estimate_alpha_empirical(
    model: &LossModel,
    correction: &CorrectionOperator,
    points: &[Vec<f64>],
) -> Option<f64> {
    points
        .iter()
        .filter_map(|w| {
            let (lhs, rhs) = residual_moments(model, correction, w);
            (rhs > 0.0).then(|| lhs / rhs)
        })
        .reduce(f64::max)
}

/// Lower estimate of the Hessian Lipschitz constant `max_i L̃_i` from random
/// pairs around `center`: `‖(∇²f_i(u) - ∇²f_i(v)) z‖ / ‖u - v‖` for unit `z`.
pub fn estimate_hessian_lipschitz(model: &LossModel, center: &[f64], radius: f64, pairs: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let d = model.dim();
    let mut draw = |scale: f64| -> Vec<f64> {
        let mut v: Vec<f64> = (0..d).map(|_| normal.sample(&mut rng)).collect();
        let nv = linalg::norm(&v).max(f64::MIN_POSITIVE);
        linalg::scale(scale / nv, &mut v);
        v
    };
    let mut best: f64 = 0.0;
    for _ in 0..pairs {
        let mut u = draw(radius);
        linalg::axpy(1.0, center, &mut u);
        let mut v = draw(radius);
        linalg::axpy(1.0, center, &mut v);
        let z = draw(1.0);
        let dist = linalg::norm(&linalg::sub(&u, &v));
        if dist == 0.0 {
            continue;
        }
        let (mut hu, mut hv) = (vec![0.0; d], vec![0.0; d]);
        for i in 0..model.n() {
            model.hess_vec_sample_into(i, &u, &z, &mut hu);
            model.hess_vec_sample_into(i, &v, &z, &mut hv);
            best = best.max(linalg::norm(&linalg::sub(&hu, &hv)) / dist);
        }
    }
    best
}

/// `(1/n) Σ_i ‖∇f_i(w) - ∇f_i(z)‖²`.
pub fn mean_gradient_difference_sq(model: &LossModel, w: &[f64], z: &[f64]) -> f64 {
    let d = model.dim();
    let (mut gw, mut gz) = (vec![0.0; d], vec![0.0; d]);
    let mut total = 0.0;
    for i in 0..model.n() {
        model.grad_sample_into(i, w, &mut gw);
        model.grad_sample_into(i, z, &mut gz);
        total += linalg::dist_sq(&gw, &gz);
    }
    total / model.n() as f64
}

/// Least-squares fit of `y` on `x`: `(slope, intercept, R²)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, my - slope * mx, r2)
}
