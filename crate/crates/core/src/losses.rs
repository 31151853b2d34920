//! Finite-sum loss models `F(w) = (1/n) Σ f_i(w)` with the derivative
//! oracles the variance-reduced methods need.
//!
//! Both models carry the ridge term inside every component,
//! `f_i(w) = ℓ(b_i a_iᵀw) + (λ/2)‖w‖²`, so the average of the components is
//! exactly the regularized objective:
//!
//! * logistic: `ℓ(z) = log(1 + exp(-z))`
//! * squared hinge: `ℓ(z) = ½ [1 - z]₊²`, giving
//!   `F = (1/2n) Σ [1 - b_i a_iᵀw]₊² + (λ/2)‖w‖²`.

use std::sync::Arc;

use thiserror::Error;

use crate::data::SparseDataset;
use crate::linalg;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("sample index {index} out of range for {n} samples")]
    SampleIndex { index: usize, n: usize },
    #[error("regularization weight must be finite and non-negative, got {0}")]
    Lambda(f64),
    #[error("classification losses need labels in {{-1, +1}}; sample {index} has {label}")]
    Label { index: usize, label: f64 },
    #[error("dataset is empty")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    Logistic,
    SquaredHinge,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Logistic => "logistic",
            LossKind::SquaredHinge => "svm",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "logistic" | "lr" => Ok(LossKind::Logistic),
            "svm" | "squared-hinge" | "sqhinge" => Ok(LossKind::SquaredHinge),
            other => Err(format!("unknown model '{other}' (expected logistic|svm)")),
        }
    }
}

/// `log(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// A regularized binary classification objective over a shared dataset.
#[derive(Debug, Clone)]
pub struct LossModel {
    data: Arc<SparseDataset>,
    lambda: f64,
    kind: LossKind,
    sample_smoothness: Vec<f64>,
}

impl LossModel {
    pub fn new(data: Arc<SparseDataset>, lambda: f64, kind: LossKind) -> Result<Self, LossError> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(LossError::Lambda(lambda));
        }
        if data.n() == 0 {
            return Err(LossError::Empty);
        }
        if let Some((index, &label)) =
            data.labels().iter().enumerate().find(|(_, b)| **b != 1.0 && **b != -1.0)
        {
            return Err(LossError::Label { index, label });
        }
        let curvature = match kind {
            LossKind::Logistic => 0.25,
            LossKind::SquaredHinge => 1.0,
        };
        let sample_smoothness =
            data.samples().iter().map(|a| curvature * a.norm_sq() + lambda).collect();
        Ok(Self { data, lambda, kind, sample_smoothness })
    }

    pub fn data(&self) -> &Arc<SparseDataset> {
        &self.data
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.data.n()
    }

    pub fn dim(&self) -> usize {
        self.data.dim()
    }

    /// Gradient Lipschitz constant of `f_i`.
    pub fn sample_smoothness(&self, i: usize) -> f64 {
        self.sample_smoothness[i]
    }

    /// `L = max_i L_i`.
    pub fn smoothness(&self) -> f64 {
        self.sample_smoothness.iter().copied().fold(0.0, f64::max)
    }

    /// Strong convexity modulus shared by every component (`μ = λ`).
    pub fn strong_convexity(&self) -> f64 {
        self.lambda
    }

    fn check_dim(&self, v: &[f64]) -> Result<(), LossError> {
        if v.len() != self.dim() {
            return Err(LossError::Dimension { expected: self.dim(), got: v.len() });
        }
        Ok(())
    }

    fn check_index(&self, i: usize) -> Result<(), LossError> {
        if i >= self.n() {
            return Err(LossError::SampleIndex { index: i, n: self.n() });
        }
        Ok(())
    }

    /// `a_iᵀ w`.
    #[inline]
    pub fn margin(&self, i: usize, w: &[f64]) -> f64 {
        self.data.samples()[i].dot(w)
    }

    /// Data-term loss `ℓ(b_i z)` at logit `z`, without the ridge term.
    #[inline]
    pub fn data_loss(&self, i: usize, z: f64) -> f64 {
        let b = self.data.labels()[i];
        match self.kind {
            LossKind::Logistic => softplus(-b * z),
            LossKind::SquaredHinge => {
                let r = (1.0 - b * z).max(0.0);
                0.5 * r * r
            }
        }
    }

    /// Derivative of the data term with respect to the logit `z`, so that
    /// `∇f_i(w) = coef · a_i + λw`.
    #[inline]
    pub fn grad_coef(&self, i: usize, z: f64) -> f64 {
        let b = self.data.labels()[i];
        match self.kind {
            LossKind::Logistic => -b * sigmoid(-b * z),
            LossKind::SquaredHinge => -b * (1.0 - b * z).max(0.0),
        }
    }

    /// Second derivative of the data term with respect to `z`, so that
    /// `∇²f_i(w) = coef · a_i a_iᵀ + λI`. The hinge kink uses the inactive
    /// branch.
    #[inline]
    pub fn hess_coef(&self, i: usize, z: f64) -> f64 {
        match self.kind {
            LossKind::Logistic => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
            LossKind::SquaredHinge => {
                let b = self.data.labels()[i];
                if 1.0 - b * z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// `F(w)`.
    pub fn value(&self, w: &[f64]) -> Result<f64, LossError> {
        self.check_dim(w)?;
        let n = self.n() as f64;
        let data: f64 = (0..self.n()).map(|i| self.data_loss(i, self.margin(i, w))).sum();
        Ok(data / n + 0.5 * self.lambda * linalg::norm_sq(w))
    }

    /// `f_i(w)`, including the ridge term.
    pub fn sample_value(&self, i: usize, w: &[f64]) -> Result<f64, LossError> {
        self.check_dim(w)?;
        self.check_index(i)?;
        Ok(self.data_loss(i, self.margin(i, w)) + 0.5 * self.lambda * linalg::norm_sq(w))
    }

    /// Writes `∇f_i(w)` into `out` without validation.
    #[inline]
    pub fn grad_sample_into(&self, i: usize, w: &[f64], out: &mut [f64]) {
        let a = &self.data.samples()[i];
        let coef = self.grad_coef(i, a.dot(w));
        for (o, wj) in out.iter_mut().zip(w) {
            *o = self.lambda * wj;
        }
        a.axpy_into(coef, out);
    }

    /// `∇f_i(w)`.
    pub fn grad_sample(&self, i: usize, w: &[f64]) -> Result<Vec<f64>, LossError> {
        self.check_dim(w)?;
        self.check_index(i)?;
        let mut out = vec![0.0; self.dim()];
        self.grad_sample_into(i, w, &mut out);
        Ok(out)
    }

    /// `∇F(w)` in one pass over the data.
    pub fn grad_full(&self, w: &[f64]) -> Result<Vec<f64>, LossError> {
        self.check_dim(w)?;
        let mut out = vec![0.0; self.dim()];
        let inv_n = 1.0 / self.n() as f64;
        for (i, a) in self.data.samples().iter().enumerate() {
            let coef = self.grad_coef(i, a.dot(w));
            a.axpy_into(coef * inv_n, &mut out);
        }
        linalg::axpy(self.lambda, w, &mut out);
        Ok(out)
    }

    /// Writes `∇²f_i(w) v` into `out` without validation.
    #[inline]
    pub fn hess_vec_sample_into(&self, i: usize, w: &[f64], v: &[f64], out: &mut [f64]) {
        let a = &self.data.samples()[i];
        let h = self.hess_coef(i, a.dot(w));
        for (o, vj) in out.iter_mut().zip(v) {
            *o = self.lambda * vj;
        }
        if h != 0.0 {
            a.axpy_into(h * a.dot(v), out);
        }
    }

    /// `∇²f_i(w) v`.
    pub fn hess_vec_sample(&self, i: usize, w: &[f64], v: &[f64]) -> Result<Vec<f64>, LossError> {
        self.check_dim(w)?;
        self.check_dim(v)?;
        self.check_index(i)?;
        let mut out = vec![0.0; self.dim()];
        self.hess_vec_sample_into(i, w, v, &mut out);
        Ok(out)
    }

    /// Diagonal of `∇²f_i(w)`.
    pub fn hess_diag_sample(&self, i: usize, w: &[f64]) -> Result<Vec<f64>, LossError> {
        self.check_dim(w)?;
        self.check_index(i)?;
        let mut out = vec![self.lambda; self.dim()];
        let a = &self.data.samples()[i];
        let h = self.hess_coef(i, a.dot(w));
        for (j, v) in a.iter() {
            out[j] += h * v * v;
        }
        Ok(out)
    }

    /// Mean Hessian-vector product `∇²F(w) v`, matrix free.
    pub fn hess_vec_full(&self, w: &[f64], v: &[f64]) -> Result<Vec<f64>, LossError> {
        self.check_dim(w)?;
        self.check_dim(v)?;
        let inv_n = 1.0 / self.n() as f64;
        let mut out = vec![0.0; self.dim()];
        for (i, a) in self.data.samples().iter().enumerate() {
            let h = self.hess_coef(i, a.dot(w));
            if h != 0.0 {
                a.axpy_into(h * a.dot(v) * inv_n, &mut out);
            }
        }
        linalg::axpy(self.lambda, v, &mut out);
        Ok(out)
    }

    /// Row-major dense `∇²F(w)`, assembled from rank-one updates.
    pub fn hessian_dense(&self, w: &[f64]) -> Result<Vec<f64>, LossError> {
        self.check_dim(w)?;
        let d = self.dim();
        let inv_n = 1.0 / self.n() as f64;
        let mut h = vec![0.0; d * d];
        for (i, a) in self.data.samples().iter().enumerate() {
            let c = self.hess_coef(i, a.dot(w)) * inv_n;
            if c == 0.0 {
                continue;
            }
            for (j, vj) in a.iter() {
                let row = &mut h[j * d..(j + 1) * d];
                for (k, vk) in a.iter() {
                    row[k] += c * vj * vk;
                }
            }
        }
        for j in 0..d {
            h[j * d + j] += self.lambda;
        }
        Ok(h)
    }
}
