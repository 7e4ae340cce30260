//! Kernel SVM on neural codes: SMO-trained binary machines, one-vs-rest
//! multiclass models, and cross-validated grid search.

mod grid;
mod io;
pub mod smo;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use grid::{default_grid, grid_search, parse_grid, stratified_folds, GridCell, GridOptions, GridSearchResult};
pub use io::{load_model, save_model, SVM_MAGIC, SVM_VERSION};

use crate::network::rank_desc;

#[derive(Debug, Error)]
pub enum SvmError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("training set needs both a positive and a negative sample")]
    SingleClass,
    #[error("class {0:?} has no samples")]
    EmptyClass(String),
    #[error("class {class:?} has {count} samples, fewer than {folds} folds")]
    ClassSmallerThanFolds { class: String, count: usize, folds: usize },
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("k = {k} outside 1..={classes}")]
    TopK { k: usize, classes: usize },
    #[error("model file: {0}")]
    Format(String),
    #[error("unsupported model version {0}")]
    Version(u32),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, SvmError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum KernelKind {
    Rbf,
    Sigmoid,
    Linear,
}

impl KernelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            KernelKind::Rbf => "rbf",
            KernelKind::Sigmoid => "sigmoid",
            KernelKind::Linear => "linear",
        }
    }

    fn tag(self) -> u8 {
        self as u8
    }

    fn from_tag(tag: u8) -> Option<Self> {
        [KernelKind::Rbf, KernelKind::Sigmoid, KernelKind::Linear].get(tag as usize).copied()
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KernelKind {
    type Err = SvmError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rbf" => Ok(KernelKind::Rbf),
            "sigmoid" => Ok(KernelKind::Sigmoid),
            "linear" => Ok(KernelKind::Linear),
            _ => Err(SvmError::Param(format!("unknown kernel {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    /// Ignored by the linear kernel.
    pub gamma: f64,
    /// Sigmoid offset.
    pub coef0: f64,
}

impl KernelSpec {
    pub fn rbf(gamma: f64) -> Self {
        Self { kind: KernelKind::Rbf, gamma, coef0: 0.0 }
    }

    pub fn sigmoid(gamma: f64, coef0: f64) -> Self {
        Self { kind: KernelKind::Sigmoid, gamma, coef0 }
    }

    pub fn linear() -> Self {
        Self { kind: KernelKind::Linear, gamma: 0.0, coef0: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind != KernelKind::Linear && !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(SvmError::Param(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !self.coef0.is_finite() {
            return Err(SvmError::Param("coef0 must be finite".into()));
        }
        Ok(())
    }

    /// Kernel value without a length check.
    fn apply(&self, x: &[f32], y: &[f32]) -> f64 {
        match self.kind {
            KernelKind::Rbf => {
                let d2: f64 = x.iter().zip(y).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum();
                (-self.gamma * d2).exp()
            }
            KernelKind::Sigmoid => (self.gamma * dot(x, y) + self.coef0).tanh(),
            KernelKind::Linear => dot(x, y),
        }
    }
}

fn dot(x: &[f32], y: &[f32]) -> f64 {
    x.iter().zip(y).map(|(&a, &b)| a as f64 * b as f64).sum()
}

pub fn kernel_eval(spec: &KernelSpec, x: &[f32], y: &[f32]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(SvmError::Dimension { expected: x.len(), found: y.len() });
    }
    Ok(spec.apply(x, y))
}

/// Row-major `n × n` kernel matrix.
pub fn gram_matrix(spec: &KernelSpec, x: &[Vec<f32>]) -> Vec<f64> {
    let n = x.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).map(|j| if j < i { 0.0 } else { spec.apply(&x[i], &x[j]) }).collect())
        .collect();
    let mut g = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            g[i * n + j] = rows[i][j];
            g[j * n + i] = rows[i][j];
        }
    }
    g
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// KKT gap at which SMO stops.
    pub tol: f64,
    /// Pair updates allowed, in multiples of the sample count.
    pub max_passes: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-3, max_passes: 1000 }
    }
}

/// α below this counts as zero when picking support vectors.
pub const ALPHA_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct BinarySvm {
    pub kernel: KernelSpec,
    pub c: f64,
    pub dim: usize,
    pub support: Vec<Vec<f32>>,
    /// `α_i · y_i` for each support vector.
    pub coef: Vec<f64>,
    pub bias: f64,
}

impl BinarySvm {
    pub fn decision_value(&self, x: &[f32]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(SvmError::Dimension { expected: self.dim, found: x.len() });
        }
        Ok(self.decision_unchecked(x))
    }

    fn decision_unchecked(&self, x: &[f32]) -> f64 {
        self.support.iter().zip(&self.coef).map(|(s, &a)| a * self.kernel.apply(s, x)).sum::<f64>() + self.bias
    }
}

/// A trained machine plus solver diagnostics.
#[derive(Debug, Clone)]
pub struct BinaryFit {
    pub svm: BinarySvm,
    /// Full α vector over the training rows.
    pub alpha: Vec<f64>,
    pub dual_objective: f64,
    pub converged: bool,
}

fn check_rows(x: &[Vec<f32>]) -> Result<usize> {
    let dim = x.first().map_or(0, Vec::len);
    if let Some(bad) = x.iter().find(|r| r.len() != dim) {
        return Err(SvmError::Dimension { expected: dim, found: bad.len() });
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(SvmError::Param("non-finite feature value".into()));
    }
    Ok(dim)
}

fn check_c(c: f64) -> Result<()> {
    if c > 0.0 && c.is_finite() {
        Ok(())
    } else {
        Err(SvmError::Param(format!("C must be positive, got {c}")))
    }
}

/// SMO on a precomputed Gram matrix of `x`; labels are ±1.
pub fn fit_with_gram(
    x: &[Vec<f32>],
    y: &[f64],
    gram: &[f64],
    kernel: KernelSpec,
    c: f64,
    opts: &SolverOptions,
) -> Result<BinaryFit> {
    if !(y.iter().any(|&v| v > 0.0) && y.iter().any(|&v| v < 0.0)) {
        return Err(SvmError::SingleClass);
    }
    let sol = smo::solve(gram, y, c, opts.tol, opts.max_passes.saturating_mul(y.len()).max(1));
    let keep: Vec<usize> = (0..y.len()).filter(|&i| sol.alpha[i] > ALPHA_TOL).collect();
    Ok(BinaryFit {
        svm: BinarySvm {
            kernel,
            c,
            dim: x.first().map_or(0, Vec::len),
            support: keep.iter().map(|&i| x[i].clone()).collect(),
            coef: keep.iter().map(|&i| sol.alpha[i] * y[i]).collect(),
            bias: sol.bias,
        },
        dual_objective: smo::dual_objective(gram, y, &sol.alpha),
        alpha: sol.alpha,
        converged: sol.converged,
    })
}

pub fn train_binary(x: &[Vec<f32>], y: &[f64], kernel: KernelSpec, c: f64, opts: &SolverOptions) -> Result<BinaryFit> {
    kernel.validate()?;
    check_c(c)?;
    check_rows(x)?;
    if x.len() != y.len() {
        return Err(SvmError::Dimension { expected: x.len(), found: y.len() });
    }
    if y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(SvmError::Param("labels must be +1 or -1".into()));
    }
    fit_with_gram(x, y, &gram_matrix(&kernel, x), kernel, c, opts)
}

/// Per-dimension affine map to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f32>,
    pub scale: Vec<f32>,
}

impl Standardizer {
    /// Constant dimensions get scale 1.
    pub fn fit(x: &[Vec<f32>]) -> Self {
        let n = x.len().max(1) as f64;
        let dim = x.first().map_or(0, Vec::len);
        let mut mean = vec![0.0f64; dim];
        for r in x {
            for (m, &v) in mean.iter_mut().zip(r) {
                *m += v as f64 / n;
            }
        }
        let mut var = vec![0.0f64; dim];
        for r in x {
            for ((s, &v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v as f64 - m).powi(2) / n;
            }
        }
        Self {
            mean: mean.iter().map(|&m| m as f32).collect(),
            scale: var.iter().map(|&v| if v > 0.0 { (1.0 / v.sqrt()) as f32 } else { 1.0 }).collect(),
        }
    }

    pub fn apply(&self, x: &[f32]) -> Vec<f32> {
        x.iter().zip(&self.mean).zip(&self.scale).map(|((&v, &m), &s)| (v - m) * s).collect()
    }
}

/// One binary machine per class, class `k` against the rest.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub class_names: Vec<String>,
    pub kernel: KernelSpec,
    pub c: f64,
    pub standardizer: Option<Standardizer>,
    pub machines: Vec<BinarySvm>,
}

impl SvmModel {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn dim(&self) -> usize {
        self.machines.first().map_or(0, |m| m.dim)
    }

    pub fn decision_values(&self, x: &[f32]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(SvmError::Dimension { expected: self.dim(), found: x.len() });
        }
        let x = match &self.standardizer {
            Some(s) => s.apply(x),
            None => x.to_vec(),
        };
        Ok(self.machines.iter().map(|m| m.decision_unchecked(&x)).collect())
    }

    /// All classes by decision value, descending; ties by class index.
    pub fn ranking(&self, x: &[f32]) -> Result<Vec<usize>> {
        Ok(rank_desc(&self.decision_values(x)?))
    }

    pub fn predict_topk(&self, x: &[f32], k: usize) -> Result<Vec<(String, f64)>> {
        if k == 0 || k > self.num_classes() {
            return Err(SvmError::TopK { k, classes: self.num_classes() });
        }
        let values = self.decision_values(x)?;
        Ok(rank_desc(&values)
            .into_iter()
            .take(k)
            .map(|i| (self.class_names[i].clone(), values[i]))
            .collect())
    }
}

fn check_labels(labels: &[usize], class_names: &[String], n: usize) -> Result<()> {
    if labels.len() != n {
        return Err(SvmError::Dimension { expected: n, found: labels.len() });
    }
    if class_names.len() < 2 {
        return Err(SvmError::Param("need at least 2 classes".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
        return Err(SvmError::Param(format!("label {bad} outside {} classes", class_names.len())));
    }
    for (k, name) in class_names.iter().enumerate() {
        if !labels.contains(&k) {
            return Err(SvmError::EmptyClass(name.clone()));
        }
    }
    Ok(())
}

/// One-vs-rest machines sharing a Gram matrix.
pub(crate) fn ovr_with_gram(
    x: &[Vec<f32>],
    labels: &[usize],
    classes: usize,
    gram: &[f64],
    kernel: KernelSpec,
    c: f64,
    opts: &SolverOptions,
) -> Result<Vec<BinarySvm>> {
    (0..classes)
        .into_par_iter()
        .map(|k| {
            let y: Vec<f64> = labels.iter().map(|&l| if l == k { 1.0 } else { -1.0 }).collect();
            Ok(fit_with_gram(x, &y, gram, kernel, c, opts)?.svm)
        })
        .collect()
}

pub fn train_ovr(
    x: &[Vec<f32>],
    labels: &[usize],
    class_names: &[String],
    kernel: KernelSpec,
    c: f64,
    standardize: bool,
    opts: &SolverOptions,
) -> Result<SvmModel> {
    kernel.validate()?;
    check_c(c)?;
    check_rows(x)?;
    check_labels(labels, class_names, x.len())?;
    let standardizer = standardize.then(|| Standardizer::fit(x));
    let scaled: Vec<Vec<f32>> = match &standardizer {
        Some(s) => x.iter().map(|r| s.apply(r)).collect(),
        None => x.to_vec(),
    };
    let gram = gram_matrix(&kernel, &scaled);
    let machines = ovr_with_gram(&scaled, labels, class_names.len(), &gram, kernel, c, opts)?;
    Ok(SvmModel {
        class_names: class_names.to_vec(),
        kernel,
        c,
        standardizer,
        machines,
    })
}

#[cfg(test)]
mod tests;
