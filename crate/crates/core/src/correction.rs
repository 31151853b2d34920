//! Curvature corrections for the variance-reduced direction.
//!
//! A correction is a pair of linear operators: a mean operator `Ã` and
//! per-sample operators `Ã_i` with `(1/n) Σ_i Ã_i = Ã`. The inner loop adds
//! `(Ã - Ã_i)(w - w̃)` to the plain SVRG direction, which keeps it unbiased.
//!
//! | variant       | `Ã`                                  | `Ã_i`                                    |
//! |---------------|--------------------------------------|------------------------------------------|
//! | `None`        | 0                                    | 0                                        |
//! | `FullHessian` | `∇²F(w̃)`                             | `∇²f_i(w̃)`                               |
//! | `DiagHessian` | `diag ∇²F(w̃)`                        | `diag ∇²f_i(w̃)`                          |
//! | `BbScalar`    | `max(sᵀy/‖s‖², δ)·I`                 | `sᵀ(∇f_i(w̃) - ∇f_i(w̃_prev))/‖s‖²·I`    |
//!
//! with `s = w̃ - w̃_prev` and `y = ∇F(w̃) - ∇F(w̃_prev)`.

use thiserror::Error;

use crate::linalg;
use crate::losses::{LossError, LossModel};

/// Largest dimension for which the full-Hessian correction assembles a dense
/// mean Hessian once per epoch instead of running a data pass per product.
pub const DENSE_HESSIAN_MAX_DIM: usize = 1024;

#[derive(Debug, Error, PartialEq)]
pub enum CorrectionError {
    #[error("anchors coincide (‖s‖ = 0); the secant curvature is undefined")]
    DegenerateAnchor,
    #[error("zero gradient difference; the alternative secant ratio is undefined")]
    ZeroGradientChange,
    #[error(transparent)]
    Loss(#[from] LossError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CorrectionVariant {
    None,
    FullHessian,
    DiagHessian,
    BbScalar,
}

#[derive(Debug, Clone)]
enum State {
    None,
    FullHessian { dense: Option<Vec<f64>> },
    Diag { mean: Vec<f64> },
    Bb { floored: f64, raw: f64, s: Vec<f64>, s_norm_sq: f64, prev_anchor: Vec<f64> },
}

/// An immutable `(Ã, Ã_i)` pair anchored at one epoch's snapshot.
#[derive(Debug, Clone)]
pub struct CorrectionOperator {
    anchor: Vec<f64>,
    state: State,
}

/// `δ = 1e-8 · max(1, L)`.
pub fn default_delta_floor(model: &LossModel) -> f64 {
    1e-8 * model.smoothness().max(1.0)
}

/// Secant curvature `sᵀy / ‖s‖²`.
pub fn bb_scalar(s: &[f64], y: &[f64]) -> Result<f64, CorrectionError> {
    let ss = linalg::norm_sq(s);
    if ss == 0.0 {
        return Err(CorrectionError::DegenerateAnchor);
    }
    Ok(linalg::dot(s, y) / ss)
}

/// The other least-squares secant fit, `sᵀy / ‖y‖²` (a step length rather
/// than a curvature). Not used by the operators.
pub fn bb_scalar_alternative(s: &[f64], y: &[f64]) -> Result<f64, CorrectionError> {
    let yy = linalg::norm_sq(y);
    if yy == 0.0 {
        return Err(CorrectionError::ZeroGradientChange);
    }
    Ok(linalg::dot(s, y) / yy)
}

impl CorrectionOperator {
    pub fn none(anchor: &[f64]) -> Self {
        Self { anchor: anchor.to_vec(), state: State::None }
    }

    /// Builds the operator, evaluating whatever full gradients it needs.
    pub fn build(
        variant: CorrectionVariant,
        model: &LossModel,
        anchor: &[f64],
        prev_anchor: Option<&[f64]>,
        delta_floor: f64,
    ) -> Result<Self, CorrectionError> {
        let (g, prev) = match (variant, prev_anchor) {
            (CorrectionVariant::BbScalar, Some(p)) => {
                (model.grad_full(anchor)?, Some((p, model.grad_full(p)?)))
            }
            _ => (Vec::new(), None),
        };
        let prev = prev.as_ref().map(|(p, gp)| (*p, gp.as_slice()));
        Self::build_with_gradients(variant, model, anchor, &g, prev, delta_floor)
    }

    /// Builds the operator from already computed full gradients at the
    /// anchors. `prev` is `(w̃_prev, ∇F(w̃_prev))`. Without a previous anchor
    /// the secant variant has no curvature pair and degrades to `None`.
    pub fn build_with_gradients(
        variant: CorrectionVariant,
        model: &LossModel,
        anchor: &[f64],
        anchor_grad: &[f64],
        prev: Option<(&[f64], &[f64])>,
        delta_floor: f64,
    ) -> Result<Self, CorrectionError> {
        let d = model.dim();
        if anchor.len() != d {
            return Err(LossError::Dimension { expected: d, got: anchor.len() }.into());
        }
        let state = match variant {
            CorrectionVariant::None => State::None,
            CorrectionVariant::FullHessian => {
                let dense = if d <= DENSE_HESSIAN_MAX_DIM && d <= model.n() {
                    Some(model.hessian_dense(anchor)?)
                } else {
                    None
                };
                State::FullHessian { dense }
            }
            CorrectionVariant::DiagHessian => {
                let mut mean = vec![0.0; d];
                let inv_n = 1.0 / model.n() as f64;
                for (i, a) in model.data().samples().iter().enumerate() {
                    let h = model.hess_coef(i, a.dot(anchor)) * inv_n;
                    for (j, v) in a.iter() {
                        mean[j] += h * v * v;
                    }
                }
                for m in &mut mean {
                    *m += model.lambda();
                }
                State::Diag { mean }
            }
            CorrectionVariant::BbScalar => match prev {
                None => State::None,
                Some((prev_anchor, prev_grad)) => {
                    let s = linalg::sub(anchor, prev_anchor);
                    let s_norm_sq = linalg::norm_sq(&s);
                    if s_norm_sq == 0.0 {
                        return Err(CorrectionError::DegenerateAnchor);
                    }
                    let y = linalg::sub(anchor_grad, prev_grad);
                    let raw = linalg::dot(&s, &y) / s_norm_sq;
                    State::Bb {
                        floored: raw.max(delta_floor),
                        raw,
                        s,
                        s_norm_sq,
                        prev_anchor: prev_anchor.to_vec(),
                    }
                }
            },
        };
        Ok(Self { anchor: anchor.to_vec(), state })
    }

    pub fn variant(&self) -> CorrectionVariant {
        match self.state {
            State::None => CorrectionVariant::None,
            State::FullHessian { .. } => CorrectionVariant::FullHessian,
            State::Diag { .. } => CorrectionVariant::DiagHessian,
            State::Bb { .. } => CorrectionVariant::BbScalar,
        }
    }

    pub fn anchor(&self) -> &[f64] {
        &self.anchor
    }

    /// Floored secant curvature `Ã`, for the secant variant.
    pub fn bb_curvature(&self) -> Option<f64> {
        match self.state {
            State::Bb { floored, .. } => Some(floored),
            _ => None,
        }
    }

    /// Secant curvature before flooring.
    pub fn bb_curvature_raw(&self) -> Option<f64> {
        match self.state {
            State::Bb { raw, .. } => Some(raw),
            _ => None,
        }
    }

    /// Per-sample secant scalar `Ã_i`. Not floored.
    pub fn bb_sample_scalar(&self, model: &LossModel, i: usize) -> Option<f64> {
        match &self.state {
            State::Bb { s, s_norm_sq, prev_anchor, .. } => {
                let a = &model.data().samples()[i];
                let c_curr = model.grad_coef(i, a.dot(&self.anchor));
                let c_prev = model.grad_coef(i, a.dot(prev_anchor));
                // sᵀ(∇f_i(w̃) - ∇f_i(w̃_prev)) = (c_curr - c_prev)·a_iᵀs + λ‖s‖²
                Some(((c_curr - c_prev) * a.dot(s) + model.lambda() * s_norm_sq) / s_norm_sq)
            }
            _ => None,
        }
    }

    fn check(&self, model: &LossModel, u: &[f64]) -> Result<(), LossError> {
        if u.len() != model.dim() || self.anchor.len() != model.dim() {
            return Err(LossError::Dimension { expected: model.dim(), got: u.len() });
        }
        Ok(())
    }

    /// `Ã_i u`.
    pub fn apply_sample(&self, model: &LossModel, i: usize, u: &[f64]) -> Result<Vec<f64>, LossError> {
        self.check(model, u)?;
        if i >= model.n() {
            return Err(LossError::SampleIndex { index: i, n: model.n() });
        }
        let mut out = vec![0.0; u.len()];
        self.apply_sample_into(model, i, u, &mut out);
        Ok(out)
    }

    /// `Ã u`.
    pub fn apply_mean(&self, model: &LossModel, u: &[f64]) -> Result<Vec<f64>, LossError> {
        self.check(model, u)?;
        let mut out = vec![0.0; u.len()];
        self.apply_mean_into(model, u, &mut out);
        Ok(out)
    }

    /// Writes `Ã_i u` into `out`.
    pub fn apply_sample_into(&self, model: &LossModel, i: usize, u: &[f64], out: &mut [f64]) {
        match &self.state {
            State::None => out.fill(0.0),
            State::FullHessian { .. } => model.hess_vec_sample_into(i, &self.anchor, u, out),
            State::Diag { .. } => {
                let a = &model.data().samples()[i];
                let h = model.hess_coef(i, a.dot(&self.anchor));
                for (o, uj) in out.iter_mut().zip(u) {
                    *o = model.lambda() * uj;
                }
                for (j, v) in a.iter() {
                    out[j] += h * v * v * u[j];
                }
            }
            State::Bb { .. } => {
                let c = self.bb_sample_scalar(model, i).unwrap();
                for (o, uj) in out.iter_mut().zip(u) {
                    *o = c * uj;
                }
            }
        }
    }

    /// Writes `Ã u` into `out`.
    pub fn apply_mean_into(&self, model: &LossModel, u: &[f64], out: &mut [f64]) {
        match &self.state {
            State::None => out.fill(0.0),
            State::FullHessian { dense: Some(h) } => {
                let d = u.len();
                for (r, o) in out.iter_mut().enumerate() {
                    *o = linalg::dot(&h[r * d..(r + 1) * d], u);
                }
            }
            State::FullHessian { dense: None } => {
                let hv = model.hess_vec_full(&self.anchor, u).expect("dimensions checked");
                out.copy_from_slice(&hv);
            }
            State::Diag { mean } => {
                for ((o, m), uj) in out.iter_mut().zip(mean).zip(u) {
                    *o = m * uj;
                }
            }
            State::Bb { floored, .. } => {
                for (o, uj) in out.iter_mut().zip(u) {
                    *o = floored * uj;
                }
            }
        }
    }

    /// Adds `(Ã - Ã_i) u` to `acc`. `scratch` must have length `d`.
    pub fn add_correction(
        &self,
        model: &LossModel,
        i: usize,
        u: &[f64],
        acc: &mut [f64],
        scratch: &mut [f64],
    ) {
        match &self.state {
            State::None => {}
            State::Bb { floored, .. } => {
                let c = floored - self.bb_sample_scalar(model, i).unwrap();
                linalg::axpy(c, u, acc);
            }
            State::Diag { mean } => {
                // the λ parts of Ã and Ã_i cancel
                for ((a, m), uj) in acc.iter_mut().zip(mean).zip(u) {
                    *a += (m - model.lambda()) * uj;
                }
                let x = &model.data().samples()[i];
                let h = model.hess_coef(i, x.dot(&self.anchor));
                for (j, v) in x.iter() {
                    acc[j] -= h * v * v * u[j];
                }
            }
            State::FullHessian { .. } => {
                self.apply_mean_into(model, u, scratch);
                linalg::axpy(1.0, scratch, acc);
                self.apply_sample_into(model, i, u, scratch);
                linalg::axpy(-1.0, scratch, acc);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_binary, SparseDataset, SparseVector};
    use crate::losses::LossKind;
    use std::sync::Arc;

    fn logistic(n: usize, d: usize, lambda: f64) -> LossModel {
        LossModel::new(Arc::new(synth_binary(n, d, 11, 0.7)), lambda, LossKind::Logistic).unwrap()
    }

    #[test]
    fn none_operator_is_zero() {
        let m = logistic(20, 4, 0.1);
        let op = CorrectionOperator::build(CorrectionVariant::None, &m, &[0.1; 4], None, 1e-8).unwrap();
        let u = [1.0, -2.0, 3.0, 0.5];
        assert_eq!(op.apply_mean(&m, &u).unwrap(), vec![0.0; 4]);
        assert_eq!(op.apply_sample(&m, 3, &u).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn secant_without_history_degrades_to_none() {
        let m = logistic(20, 4, 0.1);
        let op = CorrectionOperator::build(CorrectionVariant::BbScalar, &m, &[0.1; 4], None, 1e-8).unwrap();
        assert_eq!(op.variant(), CorrectionVariant::None);
        let op = CorrectionOperator::build(CorrectionVariant::DiagHessian, &m, &[0.1; 4], None, 1e-8).unwrap();
        assert_eq!(op.variant(), CorrectionVariant::DiagHessian);
    }

    #[test]
    fn coinciding_anchors_are_degenerate() {
        let m = logistic(20, 4, 0.1);
        let err = CorrectionOperator::build(CorrectionVariant::BbScalar, &m, &[0.1; 4], Some(&[0.1; 4]), 1e-8)
            .unwrap_err();
        assert_eq!(err, CorrectionError::DegenerateAnchor);
    }

    #[test]
    fn secant_ratios_on_quadratics() {
        // identity Hessian: y = s
        let s = [0.3, -1.2, 2.0];
        assert!((bb_scalar(&s, &s).unwrap() - 1.0).abs() < 1e-15);
        assert!((bb_scalar_alternative(&s, &s).unwrap() - 1.0).abs() < 1e-15);
        // Hessian diag(1, 4), s = (1, 1): y = (1, 4)
        assert_eq!(bb_scalar(&[1.0, 1.0], &[1.0, 4.0]).unwrap(), 2.5);
        assert_eq!(bb_scalar_alternative(&[1.0, 1.0], &[1.0, 4.0]).unwrap(), 5.0 / 17.0);
        assert_eq!(bb_scalar_alternative(&[1.0], &[0.0]), Err(CorrectionError::ZeroGradientChange));
        assert_eq!(bb_scalar(&[0.0], &[1.0]), Err(CorrectionError::DegenerateAnchor));
    }

    #[test]
    fn secant_curvature_of_pure_ridge_is_lambda() {
        // with no data curvature, F(w) = ½λ‖w‖² up to a constant only if a_i = 0
        let ds = SparseDataset::new(vec![SparseVector::from_dense(&[0.0, 0.0]); 3], vec![1.0, -1.0, 1.0], 2)
            .unwrap();
        let m = LossModel::new(Arc::new(ds), 1.0, LossKind::Logistic).unwrap();
        let op = CorrectionOperator::build(CorrectionVariant::BbScalar, &m, &[1.0, 2.0], Some(&[-0.5, 0.0]), 1e-8)
            .unwrap();
        assert!((op.bb_curvature().unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn floor_applies_to_mean_only() {
        let ds = SparseDataset::new(vec![SparseVector::from_dense(&[0.0]); 2], vec![1.0, -1.0], 1).unwrap();
        let m = LossModel::new(Arc::new(ds), 0.0, LossKind::Logistic).unwrap();
        let op = CorrectionOperator::build(CorrectionVariant::BbScalar, &m, &[1.0], Some(&[0.0]), 0.5).unwrap();
        assert_eq!(op.bb_curvature_raw(), Some(0.0));
        assert_eq!(op.bb_curvature(), Some(0.5));
        assert_eq!(op.bb_sample_scalar(&m, 0), Some(0.0));
    }

    #[test]
    fn diag_mean_is_definitional() {
        let m = logistic(25, 6, 0.05);
        let anchor = [0.3, -0.1, 0.2, 0.0, 0.5, -0.4];
        let op = CorrectionOperator::build(CorrectionVariant::DiagHessian, &m, &anchor, None, 1e-8).unwrap();
        let u = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut expected_diag = vec![0.0; 6];
        for i in 0..m.n() {
            let di = m.hess_diag_sample(i, &anchor).unwrap();
            linalg::axpy(1.0 / m.n() as f64, &di, &mut expected_diag);
        }
        let got = op.apply_mean(&m, &u).unwrap();
        for j in 0..6 {
            assert!((got[j] - expected_diag[j] * u[j]).abs() < 1e-13);
        }
    }

    #[test]
    fn add_correction_matches_difference_of_applies() {
        let m = logistic(40, 5, 0.02);
        let anchor = [0.3, -0.1, 0.2, 0.6, 0.5];
        let prev = [0.0, 0.1, -0.2, 0.4, 0.1];
        let u = [0.5, -0.5, 1.0, 0.25, -2.0];
        for variant in [
            CorrectionVariant::None,
            CorrectionVariant::FullHessian,
            CorrectionVariant::DiagHessian,
            CorrectionVariant::BbScalar,
        ] {
            let op = CorrectionOperator::build(variant, &m, &anchor, Some(&prev), 1e-8).unwrap();
            for i in [0, 7, 39] {
                let mean = op.apply_mean(&m, &u).unwrap();
                let sample = op.apply_sample(&m, i, &u).unwrap();
                let mut acc = vec![0.0; 5];
                let mut scratch = vec![0.0; 5];
                op.add_correction(&m, i, &u, &mut acc, &mut scratch);
                for j in 0..5 {
                    assert!((acc[j] - (mean[j] - sample[j])).abs() < 1e-13, "{variant:?}");
                }
            }
        }
    }

    #[test]
    fn bb_sample_scalar_matches_gradient_form() {
        let m = logistic(15, 3, 0.1);
        let curr = [0.4, -0.3, 0.8];
        let prev = [0.1, 0.2, 0.5];
        let op = CorrectionOperator::build(CorrectionVariant::BbScalar, &m, &curr, Some(&prev), 1e-8).unwrap();
        let s = linalg::sub(&curr, &prev);
        for i in 0..m.n() {
            let y = linalg::sub(&m.grad_sample(i, &curr).unwrap(), &m.grad_sample(i, &prev).unwrap());
            let direct = linalg::dot(&s, &y) / linalg::norm_sq(&s);
            assert!((op.bb_sample_scalar(&m, i).unwrap() - direct).abs() < 1e-14);
        }
    }
}
