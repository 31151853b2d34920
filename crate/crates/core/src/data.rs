//! Sparse labeled datasets: LIBSVM text I/O and synthetic instances.
//!
//! Indices are 1-based on disk and 0-based in memory. A parsed
//! [`SparseDataset`] is immutable and can be shared across concurrent runs.

use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: label {label} is outside the label rule's domain")]
    Label { line: usize, label: f64 },
    #[error("requested dimension {requested} is smaller than observed dimension {observed}")]
    Dimension { requested: usize, observed: usize },
    #[error("invalid sparse vector: {0}")]
    InvalidVector(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Sparse feature vector with strictly increasing 0-based indices and no
/// stored zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVector {
    indices: Vec<usize>,
    values: Vec<f64>,
    dim: usize,
}

impl SparseVector {
    pub fn new(indices: Vec<usize>, values: Vec<f64>, dim: usize) -> Result<Self, DataError> {
        if indices.len() != values.len() {
            return Err(DataError::InvalidVector(format!(
                "{} indices but {} values",
                indices.len(),
                values.len()
            )));
        }
        for w in indices.windows(2) {
            if w[0] >= w[1] {
                return Err(DataError::InvalidVector(format!(
                    "indices not strictly increasing at {}",
                    w[1]
                )));
            }
        }
        if let Some(&last) = indices.last() {
            if last >= dim {
                return Err(DataError::InvalidVector(format!(
                    "index {last} out of range for dimension {dim}"
                )));
            }
        }
        if values.iter().any(|v| *v == 0.0 || !v.is_finite()) {
            return Err(DataError::InvalidVector("stored zero or non-finite value".into()));
        }
        Ok(Self { indices, values, dim })
    }

    /// Builds a sparse vector from a dense slice, dropping zeros.
    pub fn from_dense(dense: &[f64]) -> Self {
        let (indices, values) = dense
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(j, v)| (j, *v))
            .unzip();
        Self { indices, values, dim: dense.len() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    #[inline]
    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.iter().map(|(j, v)| v * dense[j]).sum()
    }

    /// `y += alpha * self`
    #[inline]
    pub fn axpy_into(&self, alpha: f64, y: &mut [f64]) {
        for (j, v) in self.iter() {
            y[j] += alpha * v;
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (j, v) in self.iter() {
            out[j] = v;
        }
        out
    }

    fn with_dim(mut self, dim: usize) -> Self {
        self.dim = dim;
        self
    }
}

/// `n` labeled samples in dimension `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDataset {
    samples: Vec<SparseVector>,
    labels: Vec<f64>,
    dim: usize,
}

impl SparseDataset {
    pub fn new(samples: Vec<SparseVector>, labels: Vec<f64>, dim: usize) -> Result<Self, DataError> {
        if samples.len() != labels.len() {
            return Err(DataError::InvalidVector(format!(
                "{} samples but {} labels",
                samples.len(),
                labels.len()
            )));
        }
        let observed = observed_dim(&samples);
        if dim < observed {
            return Err(DataError::Dimension { requested: dim, observed });
        }
        let samples = samples.into_iter().map(|s| s.with_dim(dim)).collect();
        Ok(Self { samples, labels, dim })
    }

    pub fn empty() -> Self {
        Self { samples: Vec::new(), labels: Vec::new(), dim: 0 }
    }

    pub fn n(&self) -> usize {
        self.samples.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn samples(&self) -> &[SparseVector] {
        &self.samples
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> (&SparseVector, f64) {
        (&self.samples[i], self.labels[i])
    }

    pub fn nnz(&self) -> usize {
        self.samples.iter().map(SparseVector::nnz).sum()
    }

    /// Appends a sample; the dimension grows to fit it and never shrinks.
    pub fn push(&mut self, sample: SparseVector, label: f64) {
        let needed = sample.indices.last().map_or(0, |j| j + 1).max(sample.dim);
        if needed > self.dim {
            self.dim = needed;
            for s in &mut self.samples {
                s.dim = needed;
            }
        }
        self.samples.push(sample.with_dim(self.dim));
        self.labels.push(label);
    }

    pub fn is_binary(&self) -> bool {
        self.labels.iter().all(|&b| b == 1.0 || b == -1.0)
    }

    /// The first `count` samples (or all of them).
    pub fn head(&self, count: usize) -> Self {
        let k = count.min(self.n());
        Self {
            samples: self.samples[..k].to_vec(),
            labels: self.labels[..k].to_vec(),
            dim: self.dim,
        }
    }

    /// Divides each feature column by its maximum absolute value.
    pub fn scale_max_abs(&self) -> Self {
        let mut col_max = vec![0.0f64; self.dim];
        for s in &self.samples {
            for (j, v) in s.iter() {
                col_max[j] = col_max[j].max(v.abs());
            }
        }
        let samples = self
            .samples
            .iter()
            .map(|s| SparseVector {
                indices: s.indices.clone(),
                values: s.iter().map(|(j, v)| v / col_max[j]).collect(),
                dim: s.dim,
            })
            .collect();
        Self { samples, labels: self.labels.clone(), dim: self.dim }
    }

    /// SHA-256 over the exact bit patterns of dimensions, labels and entries.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n() as u64).to_le_bytes());
        h.update((self.dim as u64).to_le_bytes());
        for (s, b) in self.samples.iter().zip(&self.labels) {
            h.update(b.to_bits().to_le_bytes());
            h.update((s.nnz() as u64).to_le_bytes());
            for (j, v) in s.iter() {
                h.update((j as u64).to_le_bytes());
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

fn observed_dim(samples: &[SparseVector]) -> usize {
    samples
        .iter()
        .filter_map(|s| s.indices.last())
        .map(|j| j + 1)
        .max()
        .unwrap_or(0)
}

/// How raw file labels map to stored labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum LabelRule {
    /// Keep labels as read. Model constructors validate them.
    #[default]
    AsIs,
    /// Accept `{-1, +1}` and `{0, 1}`; zero maps to `-1`.
    Binary,
    /// Explicit `(raw, mapped)` pairs. Unmapped labels are an error unless
    /// `skip_unmapped` is set, in which case the line is dropped.
    Map { pairs: Vec<(f64, f64)>, skip_unmapped: bool },
}

impl LabelRule {
    fn apply(&self, raw: f64) -> Option<f64> {
        match self {
            LabelRule::AsIs => Some(raw),
            LabelRule::Binary => {
                if raw == 1.0 {
                    Some(1.0)
                } else if raw == -1.0 || raw == 0.0 {
                    Some(-1.0)
                } else {
                    None
                }
            }
            LabelRule::Map { pairs, .. } => {
                pairs.iter().find(|(from, _)| *from == raw).map(|(_, to)| *to)
            }
        }
    }

    fn skips_unmapped(&self) -> bool {
        matches!(self, LabelRule::Map { skip_unmapped: true, .. })
    }

    /// Parses `"3:-1,8:1"` into a skipping map rule.
    pub fn parse_map(text: &str) -> Result<Self, String> {
        let mut pairs = Vec::new();
        for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (a, b) = item
                .split_once(':')
                .ok_or_else(|| format!("label map entry '{item}' is not raw:mapped"))?;
            let a: f64 = a.trim().parse().map_err(|_| format!("bad label '{a}'"))?;
            let b: f64 = b.trim().parse().map_err(|_| format!("bad label '{b}'"))?;
            pairs.push((a, b));
        }
        if pairs.is_empty() {
            return Err("empty label map".into());
        }
        Ok(LabelRule::Map { pairs, skip_unmapped: true })
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParseOptions {
    pub labels: LabelRule,
    /// Forces the dataset dimension (for train/test agreement).
    pub dim: Option<usize>,
}

/// Parses LIBSVM text (`label idx:val idx:val ...`, 1-based indices).
pub fn parse_libsvm<R: BufRead>(reader: R, opts: &ParseOptions) -> Result<SparseDataset, DataError> {
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = lineno + 1;
        let mut tokens = line.split_whitespace();
        let Some(label_tok) = tokens.next() else { continue };
        let raw: f64 = label_tok.parse().map_err(|_| DataError::Parse {
            line: line_no,
            msg: format!("non-numeric label '{label_tok}'"),
        })?;
        let label = match opts.labels.apply(raw) {
            Some(b) => b,
            None if opts.labels.skips_unmapped() => continue,
            None => return Err(DataError::Label { line: line_no, label: raw }),
        };

        let mut indices = Vec::new();
        let mut values = Vec::new();
        let mut last: Option<usize> = None;
        for tok in tokens {
            let (idx, val) = tok.split_once(':').ok_or_else(|| DataError::Parse {
                line: line_no,
                msg: format!("token '{tok}' is not idx:val"),
            })?;
            let idx: usize = idx.parse().map_err(|_| DataError::Parse {
                line: line_no,
                msg: format!("non-numeric index '{idx}'"),
            })?;
            if idx == 0 {
                return Err(DataError::Parse { line: line_no, msg: "index 0 (indices are 1-based)".into() });
            }
            let val: f64 = val.parse().map_err(|_| DataError::Parse {
                line: line_no,
                msg: format!("non-numeric value '{val}'"),
            })?;
            if !val.is_finite() {
                return Err(DataError::Parse { line: line_no, msg: format!("non-finite value '{val}'") });
            }
            let j = idx - 1;
            if let Some(prev) = last {
                if j == prev {
                    return Err(DataError::Parse { line: line_no, msg: format!("duplicate index {idx}") });
                }
                if j < prev {
                    return Err(DataError::Parse { line: line_no, msg: format!("index {idx} is not increasing") });
                }
            }
            last = Some(j);
            if val != 0.0 {
                indices.push(j);
                values.push(val);
            }
        }
        let dim = last.map_or(0, |j| j + 1);
        samples.push(SparseVector { indices, values, dim });
        labels.push(label);
    }

    let observed = samples.iter().map(|s| s.dim).max().unwrap_or(0);
    let dim = match opts.dim {
        Some(d) if d < observed => return Err(DataError::Dimension { requested: d, observed }),
        Some(d) => d,
        None => observed,
    };
    let samples = samples.into_iter().map(|s| s.with_dim(dim)).collect();
    Ok(SparseDataset { samples, labels, dim })
}

pub fn parse_libsvm_str(text: &str, opts: &ParseOptions) -> Result<SparseDataset, DataError> {
    parse_libsvm(text.as_bytes(), opts)
}

pub fn load_libsvm(path: &Path, opts: &ParseOptions) -> Result<SparseDataset, DataError> {
    let file = std::fs::File::open(path)?;
    parse_libsvm(std::io::BufReader::new(file), opts)
}

/// Canonical LIBSVM text. Numbers use the shortest representation that
/// parses back to the same bits.
pub fn write_libsvm(ds: &SparseDataset) -> String {
    let mut out = String::new();
    for (s, b) in ds.samples.iter().zip(&ds.labels) {
        write!(out, "{b}").unwrap();
        for (j, v) in s.iter() {
            write!(out, " {}:{v}", j + 1).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Deterministic Gaussian binary classification instance.
///
/// Features are drawn i.i.d. from `N(0, 1/d)` so that `‖a_i‖² ≈ 1`. Labels
/// are the sign of a random hyperplane, each flipped with probability
/// `(1 - separability) / 2`.
pub fn synth_binary(n: usize, d: usize, seed: u64, separability: f64) -> SparseDataset {
    assert!(n >= 1 && d >= 1, "synth_binary needs n, d >= 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let feat = Normal::new(0.0, (1.0 / d as f64).sqrt()).unwrap();
    let unit = Normal::new(0.0, 1.0).unwrap();
    let truth: Vec<f64> = (0..d).map(|_| unit.sample(&mut rng)).collect();
    let flip_p = ((1.0 - separability.clamp(0.0, 1.0)) / 2.0).clamp(0.0, 0.5);

    let mut samples = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let dense: Vec<f64> = (0..d).map(|_| feat.sample(&mut rng)).collect();
        let z: f64 = dense.iter().zip(&truth).map(|(a, w)| a * w).sum();
        let mut b = if z >= 0.0 { 1.0 } else { -1.0 };
        if rng.random::<f64>() < flip_p {
            b = -b;
        }
        samples.push(SparseVector::from_dense(&dense));
        labels.push(b);
    }
    SparseDataset { samples, labels, dim: d }
}

/// Binary data shaped like dense benchmark sets with bounded features:
/// every coordinate lies in `[-1, 1]` with its own offset and spread, all
/// coordinates share one latent factor, and only `positive_rate` of the
/// samples are labelled `+1`. The result is far worse conditioned than
/// [`synth_binary`].
pub fn synth_imbalanced(n: usize, d: usize, seed: u64, positive_rate: f64) -> SparseDataset {
    assert!(n >= 1 && d >= 1, "synth_imbalanced needs n, d >= 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).unwrap();
    let offset: Vec<f64> = (0..d).map(|_| rng.random_range(-0.6..0.6)).collect();
    let spread: Vec<f64> = (0..d).map(|_| 10f64.powf(rng.random_range(-2.0..-0.3))).collect();
    let loading: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let truth: Vec<f64> = (0..d).map(|_| unit.sample(&mut rng)).collect();

    let mut rows = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n);
    for _ in 0..n {
        let latent = unit.sample(&mut rng);
        let dense: Vec<f64> = (0..d)
            .map(|j| {
                let c: f64 = loading[j];
                let z = c * latent + (1.0 - c * c).sqrt() * unit.sample(&mut rng);
                (offset[j] + spread[j] * z).clamp(-1.0, 1.0)
            })
            .collect();
        let centered: f64 = (0..d).map(|j| truth[j] * (dense[j] - offset[j]) / spread[j]).sum();
        scores.push(centered / (d as f64).sqrt() + 0.5 * unit.sample(&mut rng));
        rows.push(dense);
    }
    let mut sorted = scores.clone();
    sorted.sort_by(f64::total_cmp);
    let cut = ((1.0 - positive_rate.clamp(0.0, 1.0)) * n as f64).floor() as usize;
    let threshold = sorted.get(cut).copied().unwrap_or(f64::INFINITY);

    let samples = rows.iter().map(|r| SparseVector::from_dense(r)).collect();
    let labels = scores.iter().map(|&s| if s >= threshold { 1.0 } else { -1.0 }).collect();
    SparseDataset { samples, labels, dim: d }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn imbalanced_generator_shape() {
        let ds = synth_imbalanced(2000, 22, 3, 0.1);
        let pos = ds.labels().iter().filter(|&&b| b > 0.0).count();
        assert!((180..=220).contains(&pos), "{pos}");
        assert!(ds.samples().iter().all(|a| a.values().iter().all(|v| v.abs() <= 1.0)));
        assert_eq!(ds, synth_imbalanced(2000, 22, 3, 0.1));
    }

    fn parse(text: &str) -> Result<SparseDataset, DataError> {
        parse_libsvm_str(text, &ParseOptions::default())
    }

    #[test]
    fn parses_single_line() {
        let ds = parse("+1 1:0.5 3:-2.0").unwrap();
        assert_eq!(ds.labels(), &[1.0]);
        assert_eq!(ds.dim(), 3);
        let s = &ds.samples()[0];
        assert_eq!(s.indices(), &[0, 2]);
        assert_eq!(s.values(), &[0.5, -2.0]);
    }

    #[test]
    fn label_only_line_is_empty_vector() {
        let ds = parse("-1").unwrap();
        assert_eq!(ds.labels(), &[-1.0]);
        assert_eq!(ds.samples()[0].nnz(), 0);
        assert_eq!(ds.dim(), 0);
    }

    #[test]
    fn writes_canonical_text() {
        let ds = parse("+1 1:0.5 3:-2.0").unwrap();
        assert_eq!(write_libsvm(&ds), "1 1:0.5 3:-2\n");
        assert_eq!(write_libsvm(&SparseDataset::empty()), "");
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = parse("1 1:2\n-1 2:x\n").unwrap_err();
        assert!(matches!(err, DataError::Parse { line: 2, .. }), "{err}");
        let err = parse("1 3:1 2:1").unwrap_err();
        assert!(matches!(err, DataError::Parse { line: 1, .. }));
        let err = parse("1 2:1 2:1").unwrap_err();
        assert!(err.to_string().contains("duplicate"));
        let err = parse("abc 1:1").unwrap_err();
        assert!(matches!(err, DataError::Parse { line: 1, .. }));
        let err = parse("1 0:1").unwrap_err();
        assert!(matches!(err, DataError::Parse { .. }));
    }

    #[test]
    fn label_rules() {
        let opts = ParseOptions { labels: LabelRule::Binary, dim: None };
        let ds = parse_libsvm_str("0 1:1\n1 1:1\n", &opts).unwrap();
        assert_eq!(ds.labels(), &[-1.0, 1.0]);
        let err = parse_libsvm_str("2 1:1\n", &opts).unwrap_err();
        assert!(matches!(err, DataError::Label { line: 1, label } if label == 2.0));

        let opts = ParseOptions { labels: LabelRule::parse_map("3:-1,8:1").unwrap(), dim: None };
        let ds = parse_libsvm_str("3 1:1\n5 2:1\n8 4:1\n", &opts).unwrap();
        assert_eq!(ds.labels(), &[-1.0, 1.0]);
        assert_eq!(ds.n(), 2);

        let strict = LabelRule::Map { pairs: vec![(3.0, -1.0)], skip_unmapped: false };
        let opts = ParseOptions { labels: strict, dim: None };
        assert!(matches!(parse_libsvm_str("8 1:1\n", &opts), Err(DataError::Label { .. })));
    }

    #[test]
    fn dimension_override() {
        let opts = ParseOptions { labels: LabelRule::AsIs, dim: Some(10) };
        let ds = parse_libsvm_str("1 2:1\n", &opts).unwrap();
        assert_eq!(ds.dim(), 10);
        assert_eq!(ds.samples()[0].dim(), 10);
        let opts = ParseOptions { labels: LabelRule::AsIs, dim: Some(1) };
        assert!(matches!(parse_libsvm_str("1 2:1\n", &opts), Err(DataError::Dimension { .. })));
    }

    #[test]
    fn explicit_zeros_are_not_stored() {
        let ds = parse("1 1:0 2:3").unwrap();
        assert_eq!(ds.samples()[0].indices(), &[1]);
        assert_eq!(ds.dim(), 2);
    }

    #[test]
    fn push_never_shrinks_dimension() {
        let mut ds = parse("1 5:1").unwrap();
        ds.push(SparseVector::from_dense(&[1.0]), -1.0);
        assert_eq!(ds.dim(), 5);
        ds.push(SparseVector::new(vec![6], vec![2.0], 7).unwrap(), 1.0);
        assert_eq!(ds.dim(), 7);
        assert!(ds.samples().iter().all(|s| s.dim() == 7));
    }

    #[test]
    fn synth_is_deterministic_and_binary() {
        let a = synth_binary(10, 3, 7, 1.0);
        let b = synth_binary(10, 3, 7, 1.0);
        assert_eq!(a, b);
        assert!(a.is_binary());
        assert_ne!(a, synth_binary(10, 3, 8, 1.0));
        assert_eq!(a.content_hash(), b.content_hash());
    }

    #[test]
    fn max_abs_scaling_bounds_columns() {
        let ds = parse("1 1:4 2:-2\n-1 1:-8 2:1\n").unwrap().scale_max_abs();
        assert_eq!(ds.samples()[0].values(), &[0.5, -1.0]);
        assert_eq!(ds.samples()[1].values(), &[-1.0, 0.5]);
    }
}
