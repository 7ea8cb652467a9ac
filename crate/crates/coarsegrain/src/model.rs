//! Probability-simplex primitives, the parametric softmax model family, and
//! label-coarsening maps.
//!
//! Class indices are 0-based throughout the crate; the target-vs-rest
//! coarsening maps a label `y` to `1` when `y == target` and `0` otherwise.
//! Two model families are provided: a linear logit map (`logits = Wx + b`)
//! whose Jacobian is exact, and a one-hidden-layer tanh network. Either can
//! pin the last class's logit to zero, which removes the softmax shift
//! degeneracy and makes the Fisher information invertible.

use nalgebra::DMatrix;
use thiserror::Error;

/// Probabilities below this floor are clamped before taking logs, so a
/// saturated posterior never produces `-inf` in a log-likelihood.
pub const DEFAULT_PROB_FLOOR: f64 = 1e-300;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("{what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("class count must be at least 2, got {0}")]
    TooFewClasses(usize),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("coarsening map is not surjective onto 0..{coarse}: value {missing} never produced")]
    NotSurjective { coarse: usize, missing: usize },
    #[error("coarsening map table is empty")]
    EmptyMap,
    #[error("dataset must contain at least one sample")]
    EmptyDataset,
    #[error("probabilities do not form a simplex point (sum = {sum})")]
    NotASimplex { sum: f64 },
}

pub type Result<T> = std::result::Result<T, ModelError>;

// ---------------------------------------------------------------------------
// Simplex points
// ---------------------------------------------------------------------------

/// A point on the probability simplex: `K` class probabilities that are
/// non-negative and sum to one within `1e-12`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProbabilities {
    probs: Vec<f64>,
}

impl ClassProbabilities {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(ModelError::TooFewClasses(probs.len()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(ModelError::NonFinite("class probabilities"));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(ModelError::NotASimplex { sum });
        }
        Ok(Self { probs })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, class: usize) -> f64 {
        self.probs[class]
    }

    /// Target-class posterior `q = eta_c`.
    pub fn target_prob(&self, target: usize) -> f64 {
        self.probs[target]
    }

    /// The renormalized non-target distribution: `pi_k = eta_k / (1 - eta_c)`
    /// for `k != c` and `pi_c = 0`. Undefined when `eta_c = 1`; callers guard.
    pub fn non_target_distribution(&self, target: usize) -> Vec<f64> {
        let rest = 1.0 - self.probs[target];
        self.probs
            .iter()
            .enumerate()
            .map(|(k, &p)| if k == target { 0.0 } else { p / rest })
            .collect()
    }
}

/// Reusable evaluation buffers for tight loops over samples.
#[derive(Debug, Default, Clone)]
pub struct EvalScratch {
    logits: Vec<f64>,
    hidden: Vec<f64>,
    /// Posterior probabilities after a `predict_into` call.
    pub probs: Vec<f64>,
}

/// Numerically stable softmax: exponentials are taken after subtracting the
/// maximum logit, so arbitrarily large magnitudes cannot overflow.
pub fn softmax(logits: &[f64]) -> Result<ClassProbabilities> {
    if logits.len() < 2 {
        return Err(ModelError::TooFewClasses(logits.len()));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite("logits"));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    ClassProbabilities::new(exps.iter().map(|&e| e / sum).collect())
}

// ---------------------------------------------------------------------------
// Model family
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    /// `f_k(x) = w_k . x + b_k`
    Linear,
    /// `f(x) = W2 tanh(W1 x + b1) + b2`
    OneHidden { width: usize },
}

/// A parametric softmax classifier over `feature_dim`-dimensional inputs with
/// `class_count` classes.
///
/// With `pinned_last` set, the last class carries no parameters and its logit
/// is identically zero (the reduced parameterization).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SoftmaxModel {
    feature_dim: usize,
    class_count: usize,
    arch: Architecture,
    pinned_last: bool,
}

impl SoftmaxModel {
    pub fn new(feature_dim: usize, class_count: usize, arch: Architecture) -> Result<Self> {
        Self::with_pinning(feature_dim, class_count, arch, false)
    }

    pub fn with_pinning(
        feature_dim: usize,
        class_count: usize,
        arch: Architecture,
        pinned_last: bool,
    ) -> Result<Self> {
        if class_count < 2 {
            return Err(ModelError::TooFewClasses(class_count));
        }
        Ok(Self {
            feature_dim,
            class_count,
            arch,
            pinned_last,
        })
    }

    pub fn linear(feature_dim: usize, class_count: usize) -> Result<Self> {
        Self::new(feature_dim, class_count, Architecture::Linear)
    }

    pub fn linear_pinned(feature_dim: usize, class_count: usize) -> Result<Self> {
        Self::with_pinning(feature_dim, class_count, Architecture::Linear, true)
    }

    pub fn one_hidden(feature_dim: usize, class_count: usize, width: usize) -> Result<Self> {
        Self::new(feature_dim, class_count, Architecture::OneHidden { width })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn pinned_last(&self) -> bool {
        self.pinned_last
    }

    /// Classes that own parameters (all of them, or all but the pinned last).
    fn free_classes(&self) -> usize {
        if self.pinned_last {
            self.class_count - 1
        } else {
            self.class_count
        }
    }

    /// Total parameter count `p`.
    pub fn param_count(&self) -> usize {
        let kf = self.free_classes();
        match self.arch {
            Architecture::Linear => kf * (self.feature_dim + 1),
            Architecture::OneHidden { width } => {
                width * (self.feature_dim + 1) + kf * (width + 1)
            }
        }
    }

    fn check_dims(&self, theta: &[f64], x: &[f64]) -> Result<()> {
        if theta.len() != self.param_count() {
            return Err(ModelError::DimensionMismatch {
                what: "parameter vector",
                expected: self.param_count(),
                got: theta.len(),
            });
        }
        if x.len() != self.feature_dim {
            return Err(ModelError::DimensionMismatch {
                what: "input vector",
                expected: self.feature_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Hidden activations `tanh(W1 x + b1)` for the one-hidden family.
    fn hidden(&self, theta: &[f64], x: &[f64], width: usize) -> Vec<f64> {
        let d = self.feature_dim;
        let mut t = Vec::with_capacity(width);
        for j in 0..width {
            let row = &theta[j * d..(j + 1) * d];
            let b = theta[width * d + j];
            let mut a = b;
            for (w, xi) in row.iter().zip(x) {
                a += w * xi;
            }
            t.push(a.tanh());
        }
        t
    }

    /// Logit map `f(x; theta)`.
    pub fn logits(&self, theta: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        self.check_dims(theta, x)?;
        let d = self.feature_dim;
        let kf = self.free_classes();
        let mut f = vec![0.0; self.class_count];
        match self.arch {
            Architecture::Linear => {
                for (k, fk) in f.iter_mut().take(kf).enumerate() {
                    let block = &theta[k * (d + 1)..(k + 1) * (d + 1)];
                    let mut a = block[d];
                    for (w, xi) in block[..d].iter().zip(x) {
                        a += w * xi;
                    }
                    *fk = a;
                }
            }
            Architecture::OneHidden { width } => {
                let t = self.hidden(theta, x, width);
                let head = &theta[width * (d + 1)..];
                for (k, fk) in f.iter_mut().take(kf).enumerate() {
                    let row = &head[k * width..(k + 1) * width];
                    let mut a = head[kf * width + k];
                    for (w, tj) in row.iter().zip(&t) {
                        a += w * tj;
                    }
                    *fk = a;
                }
            }
        }
        Ok(f)
    }

    /// Posterior class probabilities `softmax(f(x; theta))`.
    pub fn predict(&self, theta: &[f64], x: &[f64]) -> Result<ClassProbabilities> {
        softmax(&self.logits(theta, x)?)
    }

    /// Fill `scratch.probs` with the posterior at `x` without allocating.
    /// Equivalent to [`predict`](Self::predict); meant for tight loops.
    pub fn predict_into(&self, theta: &[f64], x: &[f64], scratch: &mut EvalScratch) -> Result<()> {
        self.check_dims(theta, x)?;
        let d = self.feature_dim;
        let k = self.class_count;
        let kf = self.free_classes();
        scratch.logits.clear();
        scratch.logits.resize(k, 0.0);
        match self.arch {
            Architecture::Linear => {
                for k_idx in 0..kf {
                    let block = &theta[k_idx * (d + 1)..(k_idx + 1) * (d + 1)];
                    let mut a = block[d];
                    for (w, xi) in block[..d].iter().zip(x) {
                        a += w * xi;
                    }
                    scratch.logits[k_idx] = a;
                }
            }
            Architecture::OneHidden { width } => {
                scratch.hidden.clear();
                for j in 0..width {
                    let row = &theta[j * d..(j + 1) * d];
                    let mut a = theta[width * d + j];
                    for (w, xi) in row.iter().zip(x) {
                        a += w * xi;
                    }
                    scratch.hidden.push(a.tanh());
                }
                let head = &theta[width * (d + 1)..];
                for k_idx in 0..kf {
                    let row = &head[k_idx * width..(k_idx + 1) * width];
                    let mut a = head[kf * width + k_idx];
                    for (w, tj) in row.iter().zip(&scratch.hidden) {
                        a += w * tj;
                    }
                    scratch.logits[k_idx] = a;
                }
            }
        }
        let max = scratch
            .logits
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(ModelError::NonFinite("logits"));
        }
        scratch.probs.clear();
        let mut sum = 0.0;
        for &v in &scratch.logits {
            let e = (v - max).exp();
            scratch.probs.push(e);
            sum += e;
        }
        for p in &mut scratch.probs {
            *p /= sum;
        }
        Ok(())
    }

    /// Analytic Jacobian of the logits, `J[k][j] = d f_k / d theta_j`,
    /// as a `class_count x param_count` matrix.
    pub fn logit_jacobian(&self, theta: &[f64], x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_dims(theta, x)?;
        let d = self.feature_dim;
        let kf = self.free_classes();
        let p = self.param_count();
        let mut jac = DMatrix::zeros(self.class_count, p);
        match self.arch {
            Architecture::Linear => {
                for k in 0..kf {
                    let base = k * (d + 1);
                    for (i, xi) in x.iter().enumerate() {
                        jac[(k, base + i)] = *xi;
                    }
                    jac[(k, base + d)] = 1.0;
                }
            }
            Architecture::OneHidden { width } => {
                let t = self.hidden(theta, x, width);
                let head_base = width * (d + 1);
                let head = &theta[head_base..];
                for k in 0..kf {
                    for (j, tj) in t.iter().enumerate() {
                        let w2kj = head[k * width + j];
                        let gate = w2kj * (1.0 - tj * tj);
                        for (i, xi) in x.iter().enumerate() {
                            jac[(k, j * d + i)] = gate * xi;
                        }
                        jac[(k, width * d + j)] = gate;
                        jac[(k, head_base + k * width + j)] = *tj;
                    }
                    jac[(k, head_base + kf * width + k)] = 1.0;
                }
            }
        }
        Ok(jac)
    }

    /// Accumulate the Jacobian-vector product `out += J_f(x; theta)^T r`
    /// without materializing `J_f`. `r` has one weight per class.
    ///
    /// This is the hot path of every gradient computation: the score of a
    /// sample is `J^T (e_y - eta)` and the cross-entropy gradient is
    /// `J^T (eta - e_y)`.
    pub fn add_logit_vjp(&self, theta: &[f64], x: &[f64], r: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_dims(theta, x)?;
        if r.len() != self.class_count {
            return Err(ModelError::DimensionMismatch {
                what: "class weight vector",
                expected: self.class_count,
                got: r.len(),
            });
        }
        if out.len() != self.param_count() {
            return Err(ModelError::DimensionMismatch {
                what: "output vector",
                expected: self.param_count(),
                got: out.len(),
            });
        }
        let d = self.feature_dim;
        let kf = self.free_classes();
        match self.arch {
            Architecture::Linear => {
                for (k, &rk) in r.iter().take(kf).enumerate() {
                    if rk == 0.0 {
                        continue;
                    }
                    let base = k * (d + 1);
                    for (i, xi) in x.iter().enumerate() {
                        out[base + i] += rk * xi;
                    }
                    out[base + d] += rk;
                }
            }
            Architecture::OneHidden { width } => {
                let t = self.hidden(theta, x, width);
                let head_base = width * (d + 1);
                let head = &theta[head_base..];
                // Head gradients plus the signal flowing back into each unit.
                let mut back = vec![0.0; width];
                for (k, &rk) in r.iter().take(kf).enumerate() {
                    if rk == 0.0 {
                        continue;
                    }
                    for (j, tj) in t.iter().enumerate() {
                        out[head_base + k * width + j] += rk * tj;
                        back[j] += rk * head[k * width + j];
                    }
                    out[head_base + kf * width + k] += rk;
                }
                for (j, tj) in t.iter().enumerate() {
                    let gate = back[j] * (1.0 - tj * tj);
                    if gate == 0.0 {
                        continue;
                    }
                    for (i, xi) in x.iter().enumerate() {
                        out[j * d + i] += gate * xi;
                    }
                    out[width * d + j] += gate;
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Label coarsening
// ---------------------------------------------------------------------------

/// A deterministic many-to-one map on class labels.
///
/// The canonical map is target-vs-rest: `z = 1` iff `y == target`, else `0`.
/// A general map is given by a full table `g[y]` and must be surjective onto
/// a dense coarse label set `0..M`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CoarseningMap {
    TargetVsRest { target: usize },
    General { table: Vec<usize>, coarse_count: usize },
}

impl CoarseningMap {
    pub fn target_vs_rest(target: usize) -> Self {
        CoarseningMap::TargetVsRest { target }
    }

    pub fn general(table: Vec<usize>) -> Result<Self> {
        if table.is_empty() {
            return Err(ModelError::EmptyMap);
        }
        let coarse_count = table.iter().max().unwrap() + 1;
        for z in 0..coarse_count {
            if !table.contains(&z) {
                return Err(ModelError::NotSurjective {
                    coarse: coarse_count,
                    missing: z,
                });
            }
        }
        Ok(CoarseningMap::General { table, coarse_count })
    }

    /// The identity coarsening on `k` classes.
    pub fn identity(k: usize) -> Self {
        CoarseningMap::General {
            table: (0..k).collect(),
            coarse_count: k,
        }
    }

    /// Number of coarse labels `M`.
    pub fn coarse_count(&self) -> usize {
        match self {
            CoarseningMap::TargetVsRest { .. } => 2,
            CoarseningMap::General { coarse_count, .. } => *coarse_count,
        }
    }

    /// Apply the map to a label in `0..class_count`.
    pub fn coarsen(&self, y: usize, class_count: usize) -> Result<usize> {
        if y >= class_count {
            return Err(ModelError::LabelOutOfRange {
                label: y,
                classes: class_count,
            });
        }
        match self {
            CoarseningMap::TargetVsRest { target } => Ok(usize::from(y == *target)),
            CoarseningMap::General { table, .. } => {
                if y >= table.len() {
                    return Err(ModelError::LabelOutOfRange {
                        label: y,
                        classes: table.len(),
                    });
                }
                Ok(table[y])
            }
        }
    }

    /// All fine labels that map to the coarse label `z`.
    pub fn fiber(&self, z: usize, class_count: usize) -> Vec<usize> {
        (0..class_count)
            .filter(|&y| matches!(self.coarsen(y, class_count), Ok(got) if got == z))
            .collect()
    }

    /// `p(z | x)` under the fine posterior `eta`.
    pub fn coarse_prob(&self, eta: &ClassProbabilities, z: usize) -> f64 {
        self.fiber(z, eta.len()).iter().map(|&y| eta.prob(y)).sum()
    }
}

/// Convenience wrapper matching the canonical-map contract: returns `1` iff
/// `y` equals the map's target (or `g(y)` for a general map).
pub fn coarsen(y: usize, map: &CoarseningMap, class_count: usize) -> Result<usize> {
    map.coarsen(y, class_count)
}

// ---------------------------------------------------------------------------
// Datasets and likelihoods
// ---------------------------------------------------------------------------

/// Labeled training data: `n` inputs of dimension `d` with labels in
/// `0..class_count`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if inputs.is_empty() {
            return Err(ModelError::EmptyDataset);
        }
        if inputs.len() != labels.len() {
            return Err(ModelError::DimensionMismatch {
                what: "labels",
                expected: inputs.len(),
                got: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= class_count) {
            return Err(ModelError::LabelOutOfRange {
                label: bad,
                classes: class_count,
            });
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Which likelihood a fit or evaluation uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LikelihoodMode {
    Multiclass,
    /// Collapsed binary likelihood through the induced `eta_target`.
    Binary { target: usize },
}

/// Log-likelihood of a dataset under the model.
///
/// Multiclass: `sum_i log eta_{y_i}(x_i)`. Binary: the Bernoulli likelihood
/// of `z_i = 1{y_i = target}` through `q = eta_target`. Probabilities are
/// clamped at `floor` so saturated posteriors never yield `-inf`.
pub fn log_likelihood_with_floor(
    model: &SoftmaxModel,
    theta: &[f64],
    data: &Dataset,
    mode: LikelihoodMode,
    floor: f64,
) -> Result<f64> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut total = 0.0;
    for (x, &y) in data.inputs.iter().zip(&data.labels) {
        if y >= model.class_count() {
            return Err(ModelError::LabelOutOfRange {
                label: y,
                classes: model.class_count(),
            });
        }
        let eta = model.predict(theta, x)?;
        let term = match mode {
            LikelihoodMode::Multiclass => eta.prob(y).max(floor).ln(),
            LikelihoodMode::Binary { target } => {
                let q = eta.target_prob(target);
                if y == target {
                    q.max(floor).ln()
                } else {
                    (1.0 - q).max(floor).ln()
                }
            }
        };
        total += term;
    }
    if !total.is_finite() {
        return Err(ModelError::NonFinite("log-likelihood"));
    }
    Ok(total)
}

pub fn log_likelihood(
    model: &SoftmaxModel,
    theta: &[f64],
    data: &Dataset,
    mode: LikelihoodMode,
) -> Result<f64> {
    log_likelihood_with_floor(model, theta, data, mode, DEFAULT_PROB_FLOOR)
}
