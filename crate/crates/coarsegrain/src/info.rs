//! Score functions and conditional expected Fisher information for the
//! softmax family, in closed form and as exhaustive-expectation oracles.
//!
//! For a fixed input the label is finite, so every expectation here is an
//! exact finite sum over classes; the oracle paths never sample. The closed
//! forms are
//!
//! ```text
//! s_Y(y)      = J^T (e_y - eta)
//! s_Z(z)      = ((z - q) / (q (1 - q))) J^T (q (e_c - eta))
//! I_Y(x)      = J^T (Diag(eta) - eta eta^T) J
//! I_Z(x)      = (q / (1 - q)) v v^T,          v = J^T (e_c - eta)
//! I_Y - I_Z   = (1 - q) J^T (Diag(pi) - pi pi^T) J
//! ```
//!
//! with `q = eta_c` and `pi` the renormalized non-target distribution. The
//! gap equals the missing information `E[Var(s_Y | Z, X)]`, which is also
//! computed here directly from its definition.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{ClassProbabilities, CoarseningMap, ModelError, SoftmaxModel};

#[derive(Debug, Error)]
pub enum InfoError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("degenerate target posterior (eta_c = {q}); binary score and information are undefined")]
    DegeneratePosterior { q: f64 },
    #[error("coarse label {z} has zero probability at this input")]
    ZeroProbabilityCoarseLabel { z: usize },
    #[error("matrix dimensions differ: {a} vs {b}")]
    DimensionMismatch { a: usize, b: usize },
    #[error("expected a non-empty input sample")]
    EmptyInputs,
    #[error("binary label must be 0 or 1, got {0}")]
    BadBinaryLabel(usize),
}

pub type Result<T> = std::result::Result<T, InfoError>;

/// Which information matrix a value represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InfoKind {
    Multiclass,
    Binary,
    Gap,
    Missing,
}

/// A symmetric `p x p` information matrix.
///
/// Construction symmetrizes through `(A + A^T) / 2` so eigenvalue checks do
/// not flap on round-off.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoMatrix {
    kind: InfoKind,
    mat: DMatrix<f64>,
}

impl InfoMatrix {
    pub fn new(kind: InfoKind, mat: DMatrix<f64>) -> Self {
        let sym = (&mat + mat.transpose()) * 0.5;
        Self { kind, mat: sym }
    }

    pub fn kind(&self) -> InfoKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    /// Smallest eigenvalue of the (already symmetric) matrix.
    pub fn min_eigenvalue(&self) -> f64 {
        min_symmetric_eigenvalue(&self.mat)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        let eig = self.mat.clone().symmetric_eigen();
        eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest absolute elementwise difference to another matrix.
    pub fn max_abs_diff(&self, other: &InfoMatrix) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(InfoError::DimensionMismatch {
                a: self.dim(),
                b: other.dim(),
            });
        }
        Ok(self
            .mat
            .iter()
            .zip(other.mat.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Row-major CSV with 17 significant digits in scientific notation.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        for r in 0..self.mat.nrows() {
            let row: Vec<String> = (0..self.mat.ncols())
                .map(|c| format!("{:.16e}", self.mat[(r, c)]))
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn min_symmetric_eigenvalue(mat: &DMatrix<f64>) -> f64 {
    let eig = mat.clone().symmetric_eigen();
    eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

fn check_target_prob(eta: &ClassProbabilities, target: usize) -> Result<f64> {
    let q = eta.target_prob(target);
    if q <= 0.0 || q >= 1.0 {
        return Err(InfoError::DegeneratePosterior { q });
    }
    Ok(q)
}

// ---------------------------------------------------------------------------
// Scores
// ---------------------------------------------------------------------------

/// Multiclass per-sample score `J^T (e_y - eta)`.
pub fn score_multiclass(
    model: &SoftmaxModel,
    theta: &[f64],
    x: &[f64],
    y: usize,
) -> Result<Vec<f64>> {
    if y >= model.class_count() {
        return Err(ModelError::LabelOutOfRange {
            label: y,
            classes: model.class_count(),
        }
        .into());
    }
    let eta = model.predict(theta, x)?;
    let mut r: Vec<f64> = eta.as_slice().iter().map(|&p| -p).collect();
    r[y] += 1.0;
    let mut out = vec![0.0; model.param_count()];
    model.add_logit_vjp(theta, x, &r, &mut out)?;
    Ok(out)
}

/// Collapsed-binary per-sample score
/// `((z - q)/(q(1-q))) grad_theta q` with `grad_theta q = J^T (q (e_c - eta))`,
/// which simplifies to `((z - q)/(1 - q)) J^T (e_c - eta)`.
pub fn score_binary(
    model: &SoftmaxModel,
    theta: &[f64],
    x: &[f64],
    z: usize,
    target: usize,
) -> Result<Vec<f64>> {
    if z > 1 {
        return Err(InfoError::BadBinaryLabel(z));
    }
    let eta = model.predict(theta, x)?;
    let q = check_target_prob(&eta, target)?;
    let coef = (z as f64 - q) / (1.0 - q);
    let mut r: Vec<f64> = eta.as_slice().iter().map(|&p| -coef * p).collect();
    r[target] += coef;
    let mut out = vec![0.0; model.param_count()];
    model.add_logit_vjp(theta, x, &r, &mut out)?;
    Ok(out)
}

/// The coarse score as an explicit conditional expectation:
/// `E[s_Y | Z = z, X = x] = sum_{y: g(y) = z} s_Y(y) p(y|x) / p(z|x)`.
pub fn project_score(
    model: &SoftmaxModel,
    theta: &[f64],
    x: &[f64],
    z: usize,
    map: &CoarseningMap,
) -> Result<Vec<f64>> {
    let k = model.class_count();
    let eta = model.predict(theta, x)?;
    let fiber = map.fiber(z, k);
    let pz: f64 = fiber.iter().map(|&y| eta.prob(y)).sum();
    if fiber.is_empty() || pz <= 0.0 {
        return Err(InfoError::ZeroProbabilityCoarseLabel { z });
    }
    let mut acc = vec![0.0; model.param_count()];
    for &y in &fiber {
        let s = score_multiclass(model, theta, x, y)?;
        let w = eta.prob(y) / pz;
        for (a, v) in acc.iter_mut().zip(&s) {
            *a += w * v;
        }
    }
    Ok(acc)
}

// ---------------------------------------------------------------------------
// Closed-form conditional Fisher information
// ---------------------------------------------------------------------------

/// `I_Y(theta | x) = J^T (Diag(eta) - eta eta^T) J`.
pub fn fisher_multiclass(model: &SoftmaxModel, theta: &[f64], x: &[f64]) -> Result<InfoMatrix> {
    let eta = model.predict(theta, x)?;
    let jac = model.logit_jacobian(theta, x)?;
    Ok(InfoMatrix::new(
        InfoKind::Multiclass,
        sandwich(&jac, &simplex_covariance(eta.as_slice())),
    ))
}

/// `I_Z(theta | x) = (q / (1 - q)) v v^T` with `v = J^T (e_c - eta)`.
pub fn fisher_binary(
    model: &SoftmaxModel,
    theta: &[f64],
    x: &[f64],
    target: usize,
) -> Result<InfoMatrix> {
    let eta = model.predict(theta, x)?;
    let q = check_target_prob(&eta, target)?;
    let mut r: Vec<f64> = eta.as_slice().iter().map(|&p| -p).collect();
    r[target] += 1.0;
    let mut v = vec![0.0; model.param_count()];
    model.add_logit_vjp(theta, x, &r, &mut v)?;
    let v = DVector::from_vec(v);
    let scale = q / (1.0 - q);
    Ok(InfoMatrix::new(InfoKind::Binary, scale * &v * v.transpose()))
}

/// The coarsening gap `(1 - q) J^T (Diag(pi) - pi pi^T) J`.
pub fn fisher_gap(
    model: &SoftmaxModel,
    theta: &[f64],
    x: &[f64],
    target: usize,
) -> Result<InfoMatrix> {
    let eta = model.predict(theta, x)?;
    let q = check_target_prob(&eta, target)?;
    let pi = eta.non_target_distribution(target);
    let jac = model.logit_jacobian(theta, x)?;
    let core = simplex_covariance(&pi) * (1.0 - q);
    Ok(InfoMatrix::new(InfoKind::Gap, sandwich(&jac, &core)))
}

/// `Diag(p) - p p^T` for a probability vector.
fn simplex_covariance(p: &[f64]) -> DMatrix<f64> {
    let k = p.len();
    let mut m = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            m[(i, j)] = if i == j {
                p[i] * (1.0 - p[i])
            } else {
                -p[i] * p[j]
            };
        }
    }
    m
}

fn sandwich(jac: &DMatrix<f64>, core: &DMatrix<f64>) -> DMatrix<f64> {
    jac.transpose() * core * jac
}

// ---------------------------------------------------------------------------
// Missing information and oracles
// ---------------------------------------------------------------------------

/// `E[Var(s_Y | Z, X = x)] = sum_z p(z|x) Var(s_Y | z)`, evaluated by
/// exhaustive sums over the label fibers.
pub fn missing_information(
    model: &SoftmaxModel,
    theta: &[f64],
    x: &[f64],
    map: &CoarseningMap,
) -> Result<InfoMatrix> {
    let k = model.class_count();
    let p = model.param_count();
    let eta = model.predict(theta, x)?;
    let scores = all_scores(model, theta, x, &eta)?;
    let mut total = DMatrix::zeros(p, p);
    for z in 0..map.coarse_count() {
        let fiber = map.fiber(z, k);
        let pz: f64 = fiber.iter().map(|&y| eta.prob(y)).sum();
        if pz <= 0.0 {
            continue;
        }
        // conditional mean and second moment over the fiber
        let mut mean = DVector::zeros(p);
        let mut second = DMatrix::zeros(p, p);
        for &y in &fiber {
            let w = eta.prob(y) / pz;
            let s = &scores[y];
            mean += w * s;
            second += w * s * s.transpose();
        }
        let var = second - &mean * mean.transpose();
        total += pz * var;
    }
    Ok(InfoMatrix::new(InfoKind::Missing, total))
}

fn all_scores(
    model: &SoftmaxModel,
    theta: &[f64],
    x: &[f64],
    eta: &ClassProbabilities,
) -> Result<Vec<DVector<f64>>> {
    let k = model.class_count();
    let mut scores = Vec::with_capacity(k);
    for y in 0..k {
        let mut r: Vec<f64> = eta.as_slice().iter().map(|&p| -p).collect();
        r[y] += 1.0;
        let mut s = vec![0.0; model.param_count()];
        model.add_logit_vjp(theta, x, &r, &mut s)?;
        scores.push(DVector::from_vec(s));
    }
    Ok(scores)
}

/// Which expectation the exhaustive oracle evaluates.
#[derive(Debug, Clone, PartialEq)]
pub enum OracleMode {
    Multiclass,
    Coarsened(CoarseningMap),
}

/// Exhaustive finite-sum expectation of score outer products:
/// `E[s s^T | X = x]` over the fine posterior, or over the coarse label
/// distribution with the projected score. This is the independent check for
/// the closed forms above.
pub fn oracle_fisher(
    model: &SoftmaxModel,
    theta: &[f64],
    x: &[f64],
    mode: &OracleMode,
) -> Result<InfoMatrix> {
    let p = model.param_count();
    let eta = model.predict(theta, x)?;
    let mut acc = DMatrix::zeros(p, p);
    match mode {
        OracleMode::Multiclass => {
            let scores = all_scores(model, theta, x, &eta)?;
            for (y, s) in scores.iter().enumerate() {
                acc += eta.prob(y) * s * s.transpose();
            }
            Ok(InfoMatrix::new(InfoKind::Multiclass, acc))
        }
        OracleMode::Coarsened(map) => {
            for z in 0..map.coarse_count() {
                let pz = map.coarse_prob(&eta, z);
                if pz <= 0.0 {
                    continue;
                }
                let s = DVector::from_vec(project_score(model, theta, x, z, map)?);
                acc += pz * &s * s.transpose();
            }
            Ok(InfoMatrix::new(InfoKind::Binary, acc))
        }
    }
}

/// Exhaustive expectation of the finite-difference observed information,
/// `E_y[-hessian log eta_y]`, with a central second-difference stencil.
/// A slow cross-check that the score-outer-product and negative-Hessian
/// routes agree.
pub fn oracle_observed_information(
    model: &SoftmaxModel,
    theta: &[f64],
    x: &[f64],
    step: f64,
) -> Result<InfoMatrix> {
    let p = model.param_count();
    let eta = model.predict(theta, x)?;
    let mut acc = DMatrix::zeros(p, p);
    let mut t = theta.to_vec();
    let log_eta = |t: &[f64], y: usize| -> Result<f64> {
        let pr = model.predict(t, x)?;
        Ok(pr.prob(y).max(f64::MIN_POSITIVE).ln())
    };
    for y in 0..model.class_count() {
        let w = eta.prob(y);
        if w == 0.0 {
            continue;
        }
        for i in 0..p {
            for j in i..p {
                let h = if i == j {
                    // pure second difference
                    t[i] = theta[i] + step;
                    let fp = log_eta(&t, y)?;
                    t[i] = theta[i] - step;
                    let fm = log_eta(&t, y)?;
                    t[i] = theta[i];
                    let f0 = log_eta(&t, y)?;
                    (fp - 2.0 * f0 + fm) / (step * step)
                } else {
                    t[i] = theta[i] + step;
                    t[j] = theta[j] + step;
                    let fpp = log_eta(&t, y)?;
                    t[j] = theta[j] - step;
                    let fpm = log_eta(&t, y)?;
                    t[i] = theta[i] - step;
                    t[j] = theta[j] + step;
                    let fmp = log_eta(&t, y)?;
                    t[j] = theta[j] - step;
                    let fmm = log_eta(&t, y)?;
                    t[i] = theta[i];
                    t[j] = theta[j];
                    (fpp - fpm - fmp + fmm) / (4.0 * step * step)
                };
                acc[(i, j)] -= w * h;
                if i != j {
                    acc[(j, i)] -= w * h;
                }
            }
        }
    }
    Ok(InfoMatrix::new(InfoKind::Multiclass, acc))
}

// ---------------------------------------------------------------------------
// Expected (unconditional) information
// ---------------------------------------------------------------------------

/// Which conditional matrix an expectation averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FisherMode {
    Multiclass,
    Binary { target: usize },
    Gap { target: usize },
}

/// Arithmetic mean of conditional information matrices over an input sample
/// (the empirical `p(X)`). Conditionals are computed in parallel and reduced
/// in index order, so the result is independent of worker count.
pub fn expected_fisher(
    model: &SoftmaxModel,
    theta: &[f64],
    inputs: &[Vec<f64>],
    mode: FisherMode,
) -> Result<InfoMatrix> {
    if inputs.is_empty() {
        return Err(InfoError::EmptyInputs);
    }
    let per_input: Vec<Result<InfoMatrix>> = inputs
        .par_iter()
        .map(|x| match mode {
            FisherMode::Multiclass => fisher_multiclass(model, theta, x),
            FisherMode::Binary { target } => fisher_binary(model, theta, x, target),
            FisherMode::Gap { target } => fisher_gap(model, theta, x, target),
        })
        .collect();
    let kind = match mode {
        FisherMode::Multiclass => InfoKind::Multiclass,
        FisherMode::Binary { .. } => InfoKind::Binary,
        FisherMode::Gap { .. } => InfoKind::Gap,
    };
    let p = model.param_count();
    let mut acc = DMatrix::zeros(p, p);
    for m in per_input {
        acc += m?.matrix();
    }
    acc /= inputs.len() as f64;
    Ok(InfoMatrix::new(kind, acc))
}

// ---------------------------------------------------------------------------
// Loewner order
// ---------------------------------------------------------------------------

/// Outcome of a positive-semidefinite ordering check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LoewnerVerdict {
    Holds { min_eig: f64 },
    Fails { min_eig: f64 },
}

impl LoewnerVerdict {
    pub fn holds(&self) -> bool {
        matches!(self, LoewnerVerdict::Holds { .. })
    }

    pub fn min_eig(&self) -> f64 {
        match self {
            LoewnerVerdict::Holds { min_eig } | LoewnerVerdict::Fails { min_eig } => *min_eig,
        }
    }
}

/// `A >= B` in the Loewner order iff the smallest eigenvalue of the
/// symmetrized difference is at least `-tol`.
pub fn loewner_ge(a: &InfoMatrix, b: &InfoMatrix, tol: f64) -> Result<LoewnerVerdict> {
    if a.dim() != b.dim() {
        return Err(InfoError::DimensionMismatch {
            a: a.dim(),
            b: b.dim(),
        });
    }
    let diff = a.matrix() - b.matrix();
    let sym = (&diff + diff.transpose()) * 0.5;
    let min_eig = min_symmetric_eigenvalue(&sym);
    if min_eig >= -tol {
        Ok(LoewnerVerdict::Holds { min_eig })
    } else {
        Ok(LoewnerVerdict::Fails { min_eig })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Architecture;
    use crate::rng::stream;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// A model whose logits are the parameters themselves, so `J_f = I`.
    fn identity_model(k: usize) -> SoftmaxModel {
        SoftmaxModel::linear(0, k).unwrap()
    }

    /// theta giving eta = [1/2, 1/4, 1/4] under the identity model.
    fn quarter_theta() -> Vec<f64> {
        vec![2.0f64.ln(), 0.0, 0.0]
    }

    fn randn(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
        (0..n)
            .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
            .collect()
    }

    fn random_instance(rng: &mut impl Rng, trial: usize) -> (SoftmaxModel, Vec<f64>, Vec<f64>) {
        let k = 2 + (trial % 7);
        let d = 1 + (trial % 5);
        let model = if trial % 2 == 0 {
            SoftmaxModel::linear(d, k).unwrap()
        } else {
            SoftmaxModel::one_hidden(d, k, 3).unwrap()
        };
        let theta = randn(rng, model.param_count(), 0.7);
        let x = randn(rng, d, 1.0);
        (model, theta, x)
    }

    #[test]
    fn score_vanishes_at_certainty() {
        let m = identity_model(3);
        // saturate class 1
        let theta = vec![-2000.0, 0.0, -2000.0];
        let s = score_multiclass(&m, &theta, &[], 1).unwrap();
        assert!(s.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_evaluated_scores() {
        let m = identity_model(3);
        let theta = quarter_theta();
        let s = score_multiclass(&m, &theta, &[], 1).unwrap();
        let want = [-0.5, 0.75, -0.25];
        for (a, b) in s.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }

        let s1 = score_binary(&m, &theta, &[], 1, 0).unwrap();
        for (a, b) in s1.iter().zip([0.5, -0.25, -0.25]) {
            assert!((a - b).abs() < 1e-15);
        }
        let s0 = score_binary(&m, &theta, &[], 0, 0).unwrap();
        for (a, b) in s0.iter().zip([-0.5, 0.25, 0.25]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn scores_match_finite_difference_gradients() {
        use crate::model::{log_likelihood, Dataset, LikelihoodMode};
        let mut rng = stream(3, &[]);
        for trial in 0..30 {
            let (m, theta, x) = random_instance(&mut rng, trial);
            let y = rng.random_range(0..m.class_count());
            let data = Dataset::new(vec![x.clone()], vec![y], m.class_count()).unwrap();

            let s = score_multiclass(&m, &theta, &x, y).unwrap();
            let h = 1e-6;
            let mut t = theta.clone();
            for j in 0..m.param_count() {
                t[j] = theta[j] + h;
                let fp = log_likelihood(&m, &t, &data, LikelihoodMode::Multiclass).unwrap();
                t[j] = theta[j] - h;
                let fm = log_likelihood(&m, &t, &data, LikelihoodMode::Multiclass).unwrap();
                t[j] = theta[j];
                assert!((s[j] - (fp - fm) / (2.0 * h)).abs() < 1e-6);
            }

            let target = rng.random_range(0..m.class_count());
            let z = usize::from(y == target);
            let sb = score_binary(&m, &theta, &x, z, target).unwrap();
            let mode = LikelihoodMode::Binary { target };
            for j in 0..m.param_count() {
                t[j] = theta[j] + h;
                let fp = log_likelihood(&m, &t, &data, mode).unwrap();
                t[j] = theta[j] - h;
                let fm = log_likelihood(&m, &t, &data, mode).unwrap();
                t[j] = theta[j];
                assert!((sb[j] - (fp - fm) / (2.0 * h)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn projection_reproduces_binary_score() {
        let m = identity_model(3);
        let theta = quarter_theta();
        let map = CoarseningMap::target_vs_rest(0);
        // z = 0: weighted average over the two non-target classes
        let proj = project_score(&m, &theta, &[], 0, &map).unwrap();
        for (a, b) in proj.iter().zip([-0.5, 0.25, 0.25]) {
            assert!((a - b).abs() < 1e-15);
        }
        // z = 1 is a singleton fiber: equals the multiclass score at the target
        let proj1 = project_score(&m, &theta, &[], 1, &map).unwrap();
        let s = score_multiclass(&m, &theta, &[], 0).unwrap();
        for (a, b) in proj1.iter().zip(&s) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_coarsening_projects_to_multiclass_score() {
        let mut rng = stream(8, &[]);
        for trial in 0..20 {
            let (m, theta, x) = random_instance(&mut rng, trial);
            let map = CoarseningMap::identity(m.class_count());
            for y in 0..m.class_count() {
                let proj = project_score(&m, &theta, &x, y, &map).unwrap();
                let s = score_multiclass(&m, &theta, &x, y).unwrap();
                for (a, b) in proj.iter().zip(&s) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_probability_fiber_is_an_error() {
        let m = identity_model(3);
        // class 2 saturated to zero probability
        let theta = vec![0.0, 0.0, -2000.0];
        let map = CoarseningMap::general(vec![0, 1, 2]).unwrap();
        assert!(matches!(
            project_score(&m, &theta, &[], 2, &map),
            Err(InfoError::ZeroProbabilityCoarseLabel { z: 2 })
        ));
    }

    #[test]
    fn hand_evaluated_fisher_matrices() {
        let m = identity_model(3);
        let theta = quarter_theta();

        let fy = fisher_multiclass(&m, &theta, &[]).unwrap();
        let want_y = [
            [0.25, -0.125, -0.125],
            [-0.125, 0.1875, -0.0625],
            [-0.125, -0.0625, 0.1875],
        ];
        for i in 0..3 {
            for j in 0..3 {
                assert!((fy.matrix()[(i, j)] - want_y[i][j]).abs() < 1e-15);
            }
        }

        let fz = fisher_binary(&m, &theta, &[], 0).unwrap();
        let want_z = [
            [0.25, -0.125, -0.125],
            [-0.125, 0.0625, 0.0625],
            [-0.125, 0.0625, 0.0625],
        ];
        for i in 0..3 {
            for j in 0..3 {
                assert!((fz.matrix()[(i, j)] - want_z[i][j]).abs() < 1e-15);
            }
        }

        let gap = fisher_gap(&m, &theta, &[], 0).unwrap();
        let want_gap = [
            [0.0, 0.0, 0.0],
            [0.0, 0.125, -0.125],
            [0.0, -0.125, 0.125],
        ];
        for i in 0..3 {
            for j in 0..3 {
                assert!((gap.matrix()[(i, j)] - want_gap[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn deterministic_posterior_has_zero_information() {
        let m = identity_model(4);
        let theta = vec![0.0, -2000.0, -2000.0, -2000.0];
        let f = fisher_multiclass(&m, &theta, &[]).unwrap();
        assert!(f.matrix().amax() == 0.0);
    }

    #[test]
    fn two_class_binary_equals_multiclass() {
        let mut rng = stream(12, &[]);
        for _ in 0..20 {
            let m = SoftmaxModel::linear(2, 2).unwrap();
            let theta = randn(&mut rng, m.param_count(), 1.0);
            let x = randn(&mut rng, 2, 1.0);
            let fy = fisher_multiclass(&m, &theta, &x).unwrap();
            let fz = fisher_binary(&m, &theta, &x, 0).unwrap();
            assert!(fy.max_abs_diff(&fz).unwrap() < 1e-12);
            // and the gap is exactly zero
            let gap = fisher_gap(&m, &theta, &x, 0).unwrap();
            assert!(gap.matrix().amax() <= 1e-15);
        }
    }

    #[test]
    fn decomposition_and_oracles_agree() {
        let mut rng = stream(13, &[]);
        for trial in 0..60 {
            let (m, theta, x) = random_instance(&mut rng, trial);
            let target = rng.random_range(0..m.class_count());
            let map = CoarseningMap::target_vs_rest(target);

            let fy = fisher_multiclass(&m, &theta, &x).unwrap();
            let fz = fisher_binary(&m, &theta, &x, target).unwrap();
            let gap = fisher_gap(&m, &theta, &x, target).unwrap();
            let miss = missing_information(&m, &theta, &x, &map).unwrap();

            let p = m.param_count();
            let mut resid: f64 = 0.0;
            for i in 0..p {
                for j in 0..p {
                    let r = fy.matrix()[(i, j)] - fz.matrix()[(i, j)] - gap.matrix()[(i, j)];
                    resid = resid.max(r.abs());
                }
            }
            assert!(resid <= 1e-12, "decomposition residual {resid}");
            assert!(gap.max_abs_diff(&miss).unwrap() <= 1e-12);

            let oy = oracle_fisher(&m, &theta, &x, &OracleMode::Multiclass).unwrap();
            let oz = oracle_fisher(&m, &theta, &x, &OracleMode::Coarsened(map.clone())).unwrap();
            assert!(fy.max_abs_diff(&oy).unwrap() <= 1e-12);
            assert!(fz.max_abs_diff(&oz).unwrap() <= 1e-12);

            let verdict = loewner_ge(&fy, &fz, 1e-8).unwrap();
            assert!(verdict.holds(), "min_eig = {}", verdict.min_eig());
        }
    }

    #[test]
    fn identity_coarsening_loses_nothing() {
        let mut rng = stream(14, &[]);
        for trial in 0..10 {
            let (m, theta, x) = random_instance(&mut rng, trial);
            let map = CoarseningMap::identity(m.class_count());
            let miss = missing_information(&m, &theta, &x, &map).unwrap();
            assert!(miss.matrix().amax() <= 1e-14);
        }
    }

    #[test]
    fn two_class_canonical_coarsening_loses_nothing() {
        let m = SoftmaxModel::linear(1, 2).unwrap();
        let theta = vec![0.4, -0.3, 0.1, 0.6];
        let map = CoarseningMap::target_vs_rest(1);
        let miss = missing_information(&m, &theta, &[0.8], &map).unwrap();
        assert!(miss.matrix().amax() <= 1e-15);
    }

    #[test]
    fn single_support_non_target_distribution_closes_the_gap() {
        let m = identity_model(4);
        // only class 1 carries non-target mass; classes 2 and 3 underflow to 0
        let theta = vec![0.0, 0.0, -2000.0, -2000.0];
        let gap = fisher_gap(&m, &theta, &[], 0).unwrap();
        assert!(gap.matrix().amax() <= 1e-15);
    }

    #[test]
    fn zero_mean_scores() {
        let mut rng = stream(15, &[]);
        for trial in 0..30 {
            let (m, theta, x) = random_instance(&mut rng, trial);
            let eta = m.predict(&theta, &x).unwrap();
            let p = m.param_count();
            let mut mean_y = vec![0.0; p];
            for y in 0..m.class_count() {
                let s = score_multiclass(&m, &theta, &x, y).unwrap();
                for (a, v) in mean_y.iter_mut().zip(&s) {
                    *a += eta.prob(y) * v;
                }
            }
            assert!(mean_y.iter().all(|v| v.abs() <= 1e-12));

            let target = rng.random_range(0..m.class_count());
            let q = eta.prob(target);
            if q > 0.0 && q < 1.0 {
                let s1 = score_binary(&m, &theta, &x, 1, target).unwrap();
                let s0 = score_binary(&m, &theta, &x, 0, target).unwrap();
                for (a, b) in s1.iter().zip(&s0) {
                    assert!((q * a + (1.0 - q) * b).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn degenerate_posterior_is_an_error() {
        let m = identity_model(3);
        let theta = vec![2000.0, 0.0, 0.0];
        assert!(matches!(
            score_binary(&m, &theta, &[], 1, 0),
            Err(InfoError::DegeneratePosterior { .. })
        ));
        assert!(fisher_binary(&m, &theta, &[], 0).is_err());
        assert!(fisher_gap(&m, &theta, &[], 0).is_err());
    }

    #[test]
    fn expected_fisher_means_and_preserves_order() {
        let mut rng = stream(16, &[]);
        let m = SoftmaxModel::linear(2, 4).unwrap();
        let theta = randn(&mut rng, m.param_count(), 0.8);
        let inputs: Vec<Vec<f64>> = (0..16).map(|_| randn(&mut rng, 2, 1.0)).collect();

        let single = expected_fisher(&m, &theta, &inputs[..1], FisherMode::Multiclass).unwrap();
        let cond = fisher_multiclass(&m, &theta, &inputs[0]).unwrap();
        assert!(single.max_abs_diff(&cond).unwrap() <= 1e-15);

        // duplicating the sample leaves the mean unchanged
        let mut doubled = inputs.clone();
        doubled.extend(inputs.iter().cloned());
        let a = expected_fisher(&m, &theta, &inputs, FisherMode::Multiclass).unwrap();
        let b = expected_fisher(&m, &theta, &doubled, FisherMode::Multiclass).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() <= 1e-12);

        let iy = expected_fisher(&m, &theta, &inputs, FisherMode::Multiclass).unwrap();
        let iz = expected_fisher(&m, &theta, &inputs, FisherMode::Binary { target: 1 }).unwrap();
        assert!(loewner_ge(&iy, &iz, 1e-8).unwrap().holds());
    }

    #[test]
    fn loewner_reflexive_and_constructed_violation() {
        let m = identity_model(3);
        let theta = quarter_theta();
        let a = fisher_multiclass(&m, &theta, &[]).unwrap();
        let refl = loewner_ge(&a, &a, 1e-8).unwrap();
        assert!(refl.holds());
        assert!(refl.min_eig().abs() < 1e-12);

        let eps = 1e-3;
        let shifted = InfoMatrix::new(
            InfoKind::Multiclass,
            a.matrix() - DMatrix::identity(3, 3) * eps,
        );
        let v = loewner_ge(&shifted, &a, 1e-8).unwrap();
        assert!(!v.holds());
        assert!((v.min_eig() + eps).abs() < 1e-9);
    }

    #[test]
    fn observed_information_cross_check() {
        let mut rng = stream(17, &[]);
        let m = SoftmaxModel::linear(2, 3).unwrap();
        let theta = randn(&mut rng, m.param_count(), 0.6);
        let x = randn(&mut rng, 2, 1.0);
        let oracle = oracle_fisher(&m, &theta, &x, &OracleMode::Multiclass).unwrap();
        let hess = oracle_observed_information(&m, &theta, &x, 1e-4).unwrap();
        let denom = oracle.matrix().norm().max(1e-12);
        let diff = (oracle.matrix() - hess.matrix()).norm() / denom;
        assert!(diff <= 1e-4, "relative difference {diff}");
    }

    #[test]
    fn csv_serialization_has_full_precision() {
        let m = identity_model(3);
        let f = fisher_multiclass(&m, &quarter_theta(), &[]).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        let first: f64 = text.lines().next().unwrap().split(',').next().unwrap().parse().unwrap();
        assert_eq!(first, 0.25);
    }

    #[test]
    fn one_hidden_pinned_round_trip() {
        // pinned variants keep every identity intact
        let m =
            SoftmaxModel::with_pinning(2, 4, Architecture::OneHidden { width: 3 }, true).unwrap();
        let mut rng = stream(18, &[]);
        let theta = randn(&mut rng, m.param_count(), 0.7);
        let x = randn(&mut rng, 2, 1.0);
        let fy = fisher_multiclass(&m, &theta, &x).unwrap();
        let fz = fisher_binary(&m, &theta, &x, 1).unwrap();
        let gap = fisher_gap(&m, &theta, &x, 1).unwrap();
        let mut resid: f64 = 0.0;
        for i in 0..m.param_count() {
            for j in 0..m.param_count() {
                resid = resid.max(
                    (fy.matrix()[(i, j)] - fz.matrix()[(i, j)] - gap.matrix()[(i, j)]).abs(),
                );
            }
        }
        assert!(resid <= 1e-12);
    }
}
