//! High-accuracy minimizer `w*` for optimality-gap reporting.
//!
//! Limited-memory BFGS (two-loop recursion) with an Armijo backtracking line
//! search. Near the optimum the objective decrease falls below the rounding
//! error of `F` itself, so when backtracking cannot certify a decrease the
//! unit step is still accepted if it reduces the gradient norm without a
//! measurable increase of `F`.
//!
//! Solutions can be cached on disk, keyed by dataset hash, model kind, `λ`
//! and tolerance. The file is a short text header followed by little-endian
//! `f64`s, so a cache hit reproduces the solution bit for bit.

use std::collections::VecDeque;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::linalg;
use crate::losses::{LossError, LossKind, LossModel};

pub const CACHE_ENV: &str = "SVRG_CACHE_DIR";
const CACHE_MAGIC: &str = "svrg-reference v1";

#[derive(Debug, Error)]
pub enum ReferenceError {
    #[error("reference solve needs a strongly convex model (λ > 0)")]
    NotStronglyConvex,
    #[error("tolerance must be positive")]
    BadTolerance,
    #[error("no convergence after {} iterations (‖∇F‖ = {:e})", .0.iterations, .0.grad_norm)]
    NotConverged(Box<ReferenceSolution>),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("cache file {path}: {msg}")]
    Cache { path: PathBuf, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSolution {
    pub w_star: Vec<f64>,
    pub f_star: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub tolerance: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct ReferenceOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub memory: usize,
}

impl Default for ReferenceOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 10_000, memory: 10 }
    }
}

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

/// L-BFGS on a generic smooth objective. `fg` returns `(F(x), ∇F(x))`.
pub fn lbfgs_minimize<FG>(fg: FG, x0: &[f64], opts: &ReferenceOptions) -> ReferenceSolution
where
    FG: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let memory = opts.memory.max(1);
    let mut x = x0.to_vec();
    let (mut f, mut g) = fg(&x);
    let mut gnorm = linalg::norm(&g);
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(memory);
    let mut iterations = 0;

    while gnorm > opts.tol && iterations < opts.max_iter {
        iterations += 1;
        let mut p = two_loop(&g, &hist);
        let mut slope = linalg::dot(&g, &p);
        if !(slope < 0.0) {
            // lost descent; restart from steepest descent
            hist.clear();
            p = g.iter().map(|v| -v).collect();
            slope = -gnorm * gnorm;
        }
        let mut alpha = if hist.is_empty() { (1.0 / gnorm).min(1.0) } else { 1.0 };

        // Once the predicted decrease drops below the resolution of F, the
        // Armijo test can only accept null steps; compare gradient norms
        // instead.
        let noise = 4.0 * f64::EPSILON * f.abs().max(1.0);
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = x.iter().zip(&p).map(|(xi, pi)| xi + alpha * pi).collect();
            if trial == x {
                break;
            }
            let (ft, gt) = fg(&trial);
            let decrease = ARMIJO * alpha * slope;
            let ok = if decrease.abs() <= noise {
                ft <= f + noise && linalg::norm(&gt) < gnorm
            } else {
                ft <= f + decrease
            };
            if ft.is_finite() && ok {
                accepted = Some((trial, ft, gt));
                break;
            }
            alpha *= 0.5;
        }
        let (xn, fn_, gn) = match accepted {
            Some(step) => step,
            None if !hist.is_empty() => {
                hist.clear();
                continue;
            }
            None => break,
        };

        let s = linalg::sub(&xn, &x);
        let y = linalg::sub(&gn, &g);
        let sy = linalg::dot(&s, &y);
        if sy > 1e-16 * linalg::norm(&s) * linalg::norm(&y) && sy > 0.0 {
            if hist.len() == memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        x = xn;
        f = fn_;
        g = gn;
        gnorm = linalg::norm(&g);
    }

    ReferenceSolution {
        w_star: x,
        f_star: f,
        grad_norm: gnorm,
        iterations,
        tolerance: opts.tol,
        converged: gnorm <= opts.tol,
    }
}

fn two_loop(g: &[f64], hist: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(hist.len());
    for (s, y, rho) in hist.iter().rev() {
        let a = rho * linalg::dot(s, &q);
        linalg::axpy(-a, y, &mut q);
        alphas.push(a);
    }
    if let Some((s, y, _)) = hist.back() {
        let gamma = linalg::dot(s, y) / linalg::norm_sq(y);
        linalg::scale(gamma, &mut q);
    }
    for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
        let b = rho * linalg::dot(y, &q);
        linalg::axpy(a - b, s, &mut q);
    }
    linalg::scale(-1.0, &mut q);
    q
}

/// Minimizes the model from the origin to `‖∇F‖ ≤ tol`.
pub fn solve_reference(model: &LossModel, opts: &ReferenceOptions) -> Result<ReferenceSolution, ReferenceError> {
    if !(model.lambda() > 0.0) {
        return Err(ReferenceError::NotStronglyConvex);
    }
    if !(opts.tol > 0.0) {
        return Err(ReferenceError::BadTolerance);
    }
    let fg = |w: &[f64]| {
        let f = model.value(w).expect("dimension fixed by the model");
        let g = model.grad_full(w).expect("dimension fixed by the model");
        (f, g)
    };
    let sol = lbfgs_minimize(fg, &vec![0.0; model.dim()], opts);
    if sol.converged {
        Ok(sol)
    } else {
        Err(ReferenceError::NotConverged(Box::new(sol)))
    }
}

/// Identifies a cached reference solution.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheKey {
    pub dataset_hash: String,
    pub kind: LossKind,
    pub lambda: f64,
    pub tol: f64,
}

impl CacheKey {
    pub fn for_model(model: &LossModel, tol: f64) -> Self {
        Self { dataset_hash: model.data().content_hash(), kind: model.kind(), lambda: model.lambda(), tol }
    }

    fn line(&self) -> String {
        format!(
            "key {} {} {:016x} {:016x}",
            self.dataset_hash,
            self.kind.name(),
            self.lambda.to_bits(),
            self.tol.to_bits()
        )
    }

    fn file_name(&self) -> String {
        let short = &self.dataset_hash[..self.dataset_hash.len().min(16)];
        format!("ref-{short}-{}-{:016x}-{:016x}.bin", self.kind.name(), self.lambda.to_bits(), self.tol.to_bits())
    }
}

#[derive(Debug, Clone)]
pub struct ReferenceCache {
    dir: PathBuf,
}

impl ReferenceCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    /// Cache rooted at `$SVRG_CACHE_DIR`, if set.
    pub fn from_env() -> Option<Self> {
        std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()).map(Self::new)
    }

    pub fn path_for(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(key.file_name())
    }

    pub fn load(&self, key: &CacheKey) -> Result<Option<ReferenceSolution>, ReferenceError> {
        let path = self.path_for(key);
        match fs::read(&path) {
            Ok(bytes) => decode(&bytes, key).map(Some).map_err(|msg| ReferenceError::Cache { path, msg }),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn store(&self, key: &CacheKey, sol: &ReferenceSolution) -> Result<PathBuf, ReferenceError> {
        fs::create_dir_all(&self.dir)?;
        let path = self.path_for(key);
        let tmp = path.with_extension("tmp");
        fs::File::create(&tmp)?.write_all(&encode(sol, key))?;
        fs::rename(&tmp, &path)?;
        Ok(path)
    }

    /// Loads the solution for `model` or solves and stores it.
    pub fn solve(&self, model: &LossModel, opts: &ReferenceOptions) -> Result<ReferenceSolution, ReferenceError> {
        let key = CacheKey::for_model(model, opts.tol);
        if let Some(sol) = self.load(&key)? {
            return Ok(sol);
        }
        let sol = solve_reference(model, opts)?;
        self.store(&key, &sol)?;
        Ok(sol)
    }
}

fn encode(sol: &ReferenceSolution, key: &CacheKey) -> Vec<u8> {
    let header = format!(
        "{CACHE_MAGIC}\n{}\ndim {}\niterations {}\nconverged {}\n\n",
        key.line(),
        sol.w_star.len(),
        sol.iterations,
        u8::from(sol.converged)
    );
    let mut out = header.into_bytes();
    for v in [sol.f_star, sol.grad_norm, sol.tolerance].iter().chain(&sol.w_star) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode(bytes: &[u8], key: &CacheKey) -> Result<ReferenceSolution, String> {
    let split = bytes.windows(2).position(|w| w == b"\n\n").ok_or("missing header terminator")?;
    let header = std::str::from_utf8(&bytes[..split]).map_err(|_| "header is not UTF-8")?;
    let mut lines = header.lines();
    if lines.next() != Some(CACHE_MAGIC) {
        return Err("unknown format version".into());
    }
    if lines.next() != Some(key.line().as_str()) {
        return Err("key mismatch".into());
    }
    let mut field = |name: &str| -> Result<usize, String> {
        let line = lines.next().ok_or(format!("missing {name}"))?;
        line.strip_prefix(name)
            .and_then(|v| v.trim().parse().ok())
            .ok_or(format!("malformed {name} line"))
    };
    let dim = field("dim")?;
    let iterations = field("iterations")?;
    let converged = field("converged")? == 1;

    let mut body = &bytes[split + 2..];
    if body.len() != 8 * (3 + dim) {
        return Err(format!("body has {} bytes, expected {}", body.len(), 8 * (3 + dim)));
    }
    let mut next = || {
        let mut buf = [0u8; 8];
        body.read_exact(&mut buf).expect("length checked");
        f64::from_le_bytes(buf)
    };
    let f_star = next();
    let grad_norm = next();
    let tolerance = next();
    let w_star = (0..dim).map(|_| next()).collect();
    Ok(ReferenceSolution { w_star, f_star, grad_norm, iterations, tolerance, converged })
}

/// Reads a cache file without key validation (for inspection tools).
pub fn read_cache_file(path: &Path) -> Result<String, ReferenceError> {
    let bytes = fs::read(path)?;
    let split = bytes.windows(2).position(|w| w == b"\n\n").unwrap_or(bytes.len());
    Ok(String::from_utf8_lossy(&bytes[..split]).into_owned())
}
