//! Monte-Carlo maximum-likelihood laboratory.
//!
//! Data are sampled from a known true model, then multiclass and
//! collapsed-binary MLEs are fit under compute parity: both arms share the
//! same parameter space (the binary arm scores through the induced
//! `eta_target` of the same architecture), the same optimizer configuration,
//! and the same iteration budget. Replicated fits feed the asymptotic
//! covariance and delta-method variance comparisons.
//!
//! Per-trial randomness is derived from the study seed and the trial index,
//! so changing the trial count never reshuffles earlier trials and trials
//! can run in parallel with bit-reproducible aggregation.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::info::{self, FisherMode, InfoError, InfoMatrix};
use crate::model::{Dataset, LikelihoodMode, ModelError, SoftmaxModel};
use crate::rng;

const TAG_TRIAL: u64 = 0x01;
const TAG_INPUT: u64 = 0x02;
const TAG_LABEL: u64 = 0x03;
const TAG_FISHER: u64 = 0x04;
const TAG_BOOTSTRAP: u64 = 0x05;

#[derive(Debug, Error)]
pub enum MleError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Info(#[from] InfoError),
    #[error("objective became non-finite at iteration {iteration}")]
    NonFiniteObjective { iteration: usize },
    #[error("need at least {needed} trials, got {got}")]
    TooFewTrials { needed: usize, got: usize },
    #[error("input distribution dimension {dist} does not match model dimension {model}")]
    DimensionMismatch { dist: usize, model: usize },
    #[error("studies are not comparable: {0}")]
    MismatchedStudies(&'static str),
    #[error("{excluded} of {trials} trials failed to converge (limit {limit:.1}%)")]
    TooManyExclusions {
        excluded: usize,
        trials: usize,
        limit: f64,
    },
    #[error("Fisher information is singular even after ridge regularization")]
    SingularFisher,
}

pub type Result<T> = std::result::Result<T, MleError>;

// ---------------------------------------------------------------------------
// Input distributions
// ---------------------------------------------------------------------------

/// Marginal distribution of the inputs `p(X)`.
#[derive(Debug, Clone, PartialEq)]
pub enum InputDistribution {
    StandardGaussian { dim: usize },
    /// Uniform on `[-1, 1]^dim`.
    UniformCube { dim: usize },
    /// Uniform draw with replacement from a fixed pool.
    FixedPool { inputs: Vec<Vec<f64>> },
}

impl InputDistribution {
    pub fn dim(&self) -> usize {
        match self {
            InputDistribution::StandardGaussian { dim } => *dim,
            InputDistribution::UniformCube { dim } => *dim,
            InputDistribution::FixedPool { inputs } => inputs.first().map_or(0, |x| x.len()),
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        match self {
            InputDistribution::StandardGaussian { dim } => (0..*dim)
                .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
                .collect(),
            InputDistribution::UniformCube { dim } => {
                (0..*dim).map(|_| rng.random_range(-1.0..1.0)).collect()
            }
            InputDistribution::FixedPool { inputs } => {
                inputs[rng.random_range(0..inputs.len())].clone()
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------------

/// Configuration of the full-batch gradient-ascent fit. Compared arms must
/// use identical configurations; [`efficiency_report`] asserts this.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub max_iters: usize,
    /// Convergence test on the penalized gradient: `|grad|_inf / n <= grad_tol`.
    pub grad_tol: f64,
    /// Quadratic penalty `ridge * |theta|^2 / 2` pinning a unique optimum.
    pub ridge: f64,
    /// Armijo sufficient-increase coefficient.
    pub armijo_c: f64,
    /// Step shrink factor during backtracking.
    pub backtrack: f64,
    pub max_backtracks: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iters: 10_000,
            grad_tol: 1e-9,
            ridge: 1e-8,
            armijo_c: 1e-4,
            backtrack: 0.5,
            max_backtracks: 60,
        }
    }
}

/// Result of a single fit.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub theta: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// `|grad|_inf / n` at the returned point.
    pub grad_norm: f64,
}

/// Draw a dataset from the true model: inputs i.i.d. from `dist`, labels
/// from the posterior `predict(model, true_theta, x)`.
pub fn sample_dataset(
    model: &SoftmaxModel,
    true_theta: &[f64],
    dist: &InputDistribution,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    if dist.dim() != model.feature_dim() {
        return Err(MleError::DimensionMismatch {
            dist: dist.dim(),
            model: model.feature_dim(),
        });
    }
    let mut input_rng = rng::stream(seed, &[TAG_INPUT]);
    let mut label_rng = rng::stream(seed, &[TAG_LABEL]);
    let mut inputs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x = dist.sample(&mut input_rng);
        let eta = model.predict(true_theta, &x)?;
        let u: f64 = label_rng.random();
        let mut cum = 0.0;
        let mut y = eta.len() - 1;
        for (k, &p) in eta.as_slice().iter().enumerate() {
            cum += p;
            if u < cum {
                y = k;
                break;
            }
        }
        inputs.push(x);
        labels.push(y);
    }
    Ok(Dataset::new(inputs, labels, model.class_count())?)
}

/// Penalized log-likelihood `l(theta) - ridge |theta|^2 / 2`.
fn penalized_objective(
    model: &SoftmaxModel,
    theta: &[f64],
    data: &Dataset,
    mode: LikelihoodMode,
    ridge: f64,
    scratch: &mut crate::model::EvalScratch,
) -> Result<f64> {
    let floor = crate::model::DEFAULT_PROB_FLOOR;
    let mut ll = 0.0;
    for (x, &y) in data.inputs.iter().zip(&data.labels) {
        model.predict_into(theta, x, scratch)?;
        ll += match mode {
            LikelihoodMode::Multiclass => scratch.probs[y].max(floor).ln(),
            LikelihoodMode::Binary { target } => {
                let q = scratch.probs[target];
                if y == target {
                    q.max(floor).ln()
                } else {
                    (1.0 - q).max(floor).ln()
                }
            }
        };
    }
    let sq: f64 = theta.iter().map(|t| t * t).sum();
    Ok(ll - 0.5 * ridge * sq)
}

fn penalized_gradient(
    model: &SoftmaxModel,
    theta: &[f64],
    data: &Dataset,
    mode: LikelihoodMode,
    ridge: f64,
    scratch: &mut crate::model::EvalScratch,
    grad: &mut [f64],
) -> Result<()> {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let k = model.class_count();
    let mut r = vec![0.0; k];
    for (x, &y) in data.inputs.iter().zip(&data.labels) {
        model.predict_into(theta, x, scratch)?;
        match mode {
            LikelihoodMode::Multiclass => {
                for (rk, &pk) in r.iter_mut().zip(&scratch.probs) {
                    *rk = -pk;
                }
                r[y] += 1.0;
            }
            LikelihoodMode::Binary { target } => {
                let q = scratch.probs[target];
                if q <= 0.0 || q >= 1.0 {
                    // saturated posterior: the floored likelihood is locally
                    // flat in this sample, so it contributes no gradient
                    r.iter_mut().for_each(|rk| *rk = 0.0);
                } else {
                    let z = usize::from(y == target) as f64;
                    let coef = (z - q) / (1.0 - q);
                    for (rk, &pk) in r.iter_mut().zip(&scratch.probs) {
                        *rk = -coef * pk;
                    }
                    r[target] += coef;
                }
            }
        }
        model.add_logit_vjp(theta, x, &r, grad)?;
    }
    for (g, t) in grad.iter_mut().zip(theta) {
        *g -= ridge * t;
    }
    Ok(())
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Fit by full-batch gradient ascent with Armijo backtracking.
///
/// The initial trial step of each iteration uses the Barzilai-Borwein
/// quotient from the previous accepted step, which keeps the method a plain
/// gradient ascent while converging in far fewer iterations than a fixed
/// step. Non-convergence within the budget is flagged, not fatal; a
/// non-finite objective is fatal.
pub fn fit_mle(
    model: &SoftmaxModel,
    data: &Dataset,
    mode: LikelihoodMode,
    cfg: &FitConfig,
    init: &[f64],
) -> Result<FitOutcome> {
    let n = data.len() as f64;
    let mut scratch = crate::model::EvalScratch::default();
    let mut theta = init.to_vec();
    let mut f = penalized_objective(model, &theta, data, mode, cfg.ridge, &mut scratch)?;
    if !f.is_finite() {
        return Err(MleError::NonFiniteObjective { iteration: 0 });
    }
    let p = theta.len();
    let mut grad = vec![0.0; p];
    penalized_gradient(model, &theta, data, mode, cfg.ridge, &mut scratch, &mut grad)?;
    let mut new_grad = vec![0.0; p];
    let mut cand = vec![0.0; p];
    let mut step = 1.0 / n;
    let mut converged = false;
    let mut iterations = 0;
    // non-monotone line-search window: the reference value is the minimum
    // objective over the last few accepted iterates, with a slack at the
    // rounding noise of f so progress is not rejected once increments fall
    // below float resolution
    const WINDOW: usize = 10;
    let mut recent = std::collections::VecDeque::with_capacity(WINDOW);
    recent.push_back(f);

    for it in 0..cfg.max_iters {
        iterations = it;
        if inf_norm(&grad) / n <= cfg.grad_tol {
            converged = true;
            break;
        }
        let gsq: f64 = grad.iter().map(|g| g * g).sum();
        let f_ref = recent.iter().cloned().fold(f64::INFINITY, f64::min);
        let slack = 1e-12 * (1.0 + f.abs());
        let mut t = step;
        let mut accepted = false;
        let mut fc = f;
        for _ in 0..cfg.max_backtracks {
            for ((c, th), g) in cand.iter_mut().zip(&theta).zip(&grad) {
                *c = th + t * g;
            }
            fc = penalized_objective(model, &cand, data, mode, cfg.ridge, &mut scratch)?;
            if !fc.is_finite() {
                return Err(MleError::NonFiniteObjective { iteration: it });
            }
            if fc + slack >= f_ref + cfg.armijo_c * t * gsq {
                accepted = true;
                break;
            }
            t *= cfg.backtrack;
        }
        if !accepted {
            // line search collapsed; nothing further to gain along gradients
            break;
        }
        penalized_gradient(model, &cand, data, mode, cfg.ridge, &mut scratch, &mut new_grad)?;
        // Barzilai-Borwein curvature quotient for the next trial step
        let mut num = 0.0;
        let mut den = 0.0;
        for ((c, th), (gn, go)) in cand.iter().zip(&theta).zip(new_grad.iter().zip(&grad)) {
            let dt = c - th;
            num += dt * dt;
            den += dt * (go - gn);
        }
        // flat ridge-dominated directions have curvature near the ridge
        // weight, so the step cap must comfortably exceed 1/ridge
        step = if den > 0.0 && num > 0.0 {
            (num / den).clamp(1e-12, 1e9)
        } else {
            (t * 2.0).clamp(1e-12, 1e9)
        };
        std::mem::swap(&mut theta, &mut cand);
        std::mem::swap(&mut grad, &mut new_grad);
        f = fc;
        if recent.len() == WINDOW {
            recent.pop_front();
        }
        recent.push_back(f);
    }
    let grad_norm = inf_norm(&grad) / n;
    if grad_norm <= cfg.grad_tol {
        converged = true;
    }
    Ok(FitOutcome {
        theta,
        converged,
        iterations,
        grad_norm,
    })
}

// ---------------------------------------------------------------------------
// Replicated studies
// ---------------------------------------------------------------------------

/// One replicate of a study.
#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub trial: usize,
    pub theta_hat: Vec<f64>,
    /// Target-class posterior at the probe input, `eta_c(probe; theta_hat)`.
    pub tau_hat: f64,
    pub converged: bool,
}

/// A replicated-fit record for one arm (multiclass or binary).
#[derive(Debug, Clone)]
pub struct MleStudy {
    pub model: SoftmaxModel,
    pub mode: LikelihoodMode,
    pub n: usize,
    pub trials: Vec<TrialRecord>,
    pub true_theta: Vec<f64>,
    pub probe_x: Vec<f64>,
    pub target: usize,
    pub seed: u64,
    pub cfg: FitConfig,
}

impl MleStudy {
    pub fn non_converged(&self) -> usize {
        self.trials.iter().filter(|t| !t.converged).count()
    }

    fn converged_trials(&self) -> impl Iterator<Item = &TrialRecord> {
        self.trials.iter().filter(|t| t.converged)
    }

    /// True target posterior at the probe point.
    pub fn tau_star(&self) -> f64 {
        self.model
            .predict(&self.true_theta, &self.probe_x)
            .map(|eta| eta.prob(self.target))
            .unwrap_or(f64::NAN)
    }

    /// Sample variance of `sqrt(n) (tau_hat - tau*)` over converged trials.
    pub fn empirical_tau_variance(&self) -> f64 {
        let n = self.n as f64;
        let tau_star = self.tau_star();
        let vals: Vec<f64> = self
            .converged_trials()
            .map(|t| n.sqrt() * (t.tau_hat - tau_star))
            .collect();
        sample_variance(&vals)
    }

    /// Sample covariance of `sqrt(n) (theta_hat - theta*)` over converged trials.
    pub fn empirical_covariance(&self) -> DMatrix<f64> {
        let p = self.true_theta.len();
        let n = (self.n as f64).sqrt();
        let rows: Vec<DVector<f64>> = self
            .converged_trials()
            .map(|t| {
                DVector::from_iterator(
                    p,
                    t.theta_hat
                        .iter()
                        .zip(&self.true_theta)
                        .map(|(a, b)| n * (a - b)),
                )
            })
            .collect();
        let m = rows.len() as f64;
        let mut mean = DVector::zeros(p);
        for r in &rows {
            mean += r;
        }
        mean /= m;
        let mut cov = DMatrix::zeros(p, p);
        for r in &rows {
            let d = r - &mean;
            cov += &d * d.transpose();
        }
        cov / (m - 1.0)
    }
}

fn sample_variance(vals: &[f64]) -> f64 {
    let m = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / m;
    vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0)
}

/// Run `trials` independent replicates: sample a dataset with the trial's
/// derived seed, fit from a zero initialization, and record `theta_hat` and
/// `tau_hat`. Replicates run in parallel and aggregate in trial order.
#[allow(clippy::too_many_arguments)]
pub fn replicate_mle(
    model: &SoftmaxModel,
    true_theta: &[f64],
    dist: &InputDistribution,
    n: usize,
    trials: usize,
    mode: LikelihoodMode,
    cfg: &FitConfig,
    seed: u64,
    probe_x: &[f64],
    target: usize,
) -> Result<MleStudy> {
    if trials < 2 {
        return Err(MleError::TooFewTrials {
            needed: 2,
            got: trials,
        });
    }
    let init = vec![0.0; model.param_count()];
    let records: Vec<Result<TrialRecord>> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let trial_seed = rng::derive(seed, &[TAG_TRIAL, trial as u64]);
            let data = sample_dataset(model, true_theta, dist, n, trial_seed)?;
            let fit = fit_mle(model, &data, mode, cfg, &init)?;
            let tau_hat = model.predict(&fit.theta, probe_x)?.prob(target);
            Ok(TrialRecord {
                trial,
                theta_hat: fit.theta,
                tau_hat,
                converged: fit.converged,
            })
        })
        .collect();
    let trials_vec = records.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(MleStudy {
        model: model.clone(),
        mode,
        n,
        trials: trials_vec,
        true_theta: true_theta.to_vec(),
        probe_x: probe_x.to_vec(),
        target,
        seed,
        cfg: cfg.clone(),
    })
}

// ---------------------------------------------------------------------------
// Delta-method variance
// ---------------------------------------------------------------------------

/// Gradient of the target posterior, `G = grad_theta eta_c(x; theta)
/// = J^T (eta_c (e_c - eta))`.
pub fn posterior_gradient(
    model: &SoftmaxModel,
    theta: &[f64],
    x: &[f64],
    target: usize,
) -> Result<Vec<f64>> {
    let eta = model.predict(theta, x)?;
    let q = eta.target_prob(target);
    let mut r: Vec<f64> = eta.as_slice().iter().map(|&p| -q * p).collect();
    r[target] += q;
    let mut out = vec![0.0; model.param_count()];
    model.add_logit_vjp(theta, x, &r, &mut out)?;
    Ok(out)
}

/// Delta-method variance of the target posterior at a probe point.
#[derive(Debug, Clone)]
pub struct DeltaVariance {
    /// `G^T Fisher^{-1} G`.
    pub variance: f64,
    pub gradient: Vec<f64>,
    /// Whether a ridge was added to make the Fisher matrix invertible.
    pub ridged: bool,
}

/// Compute `G^T I^{-1} G`, adding `1e-8 I` when the smallest eigenvalue of
/// the information matrix falls below `1e-10`.
pub fn delta_variance(
    model: &SoftmaxModel,
    theta_star: &[f64],
    fisher: &InfoMatrix,
    probe_x: &[f64],
    target: usize,
) -> Result<DeltaVariance> {
    let gradient = posterior_gradient(model, theta_star, probe_x, target)?;
    let g = DVector::from_vec(gradient.clone());
    let mut mat = fisher.matrix().clone();
    let ridged = fisher.min_eigenvalue() < 1e-10;
    if ridged {
        for i in 0..mat.nrows() {
            mat[(i, i)] += 1e-8;
        }
    }
    let chol = mat.cholesky().ok_or(MleError::SingularFisher)?;
    let solved = chol.solve(&g);
    let variance = g.dot(&solved);
    Ok(DeltaVariance {
        variance,
        gradient,
        ridged,
    })
}

// ---------------------------------------------------------------------------
// Efficiency report
// ---------------------------------------------------------------------------

/// Per-arm summary inside an [`EfficiencyReport`].
#[derive(Debug, Clone)]
pub struct ArmSummary {
    pub label: &'static str,
    pub n: usize,
    pub trials: usize,
    pub excluded: usize,
    pub empirical_var_tau: f64,
    pub theoretical_var_tau: f64,
    pub empirical_covariance: DMatrix<f64>,
    pub fisher: InfoMatrix,
}

/// Head-to-head comparison of the two arms.
#[derive(Debug, Clone)]
pub struct EfficiencyReport {
    pub multiclass: ArmSummary,
    pub binary: ArmSummary,
    /// `Var(tau_Y) / Var(tau_Z)`, empirical.
    pub empirical_ratio: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub bootstrap_resamples: usize,
    /// Theoretical ordering `Var_Y <= Var_Z + 1e-12`.
    pub theoretical_holds: bool,
    /// Empirical ratio below one with the CI excluding one.
    pub empirical_strict: bool,
    pub tau_star: f64,
    pub seed: u64,
}

/// Fraction of trials allowed to be non-converged before a study is rejected.
const EXCLUSION_LIMIT: f64 = 0.02;

/// Build the efficiency report for a multiclass study and a binary study that
/// share the true parameter, sample size, probe point, and fit configuration.
///
/// The theoretical side evaluates the expected Fisher information of both
/// arms over a fresh input sample of size `fisher_inputs` and pushes it
/// through the delta method; the empirical side compares trial variances of
/// `sqrt(n) (tau_hat - tau*)` with a percentile bootstrap on the ratio.
pub fn efficiency_report(
    study_y: &MleStudy,
    study_z: &MleStudy,
    dist: &InputDistribution,
    fisher_inputs: usize,
    bootstrap_resamples: usize,
    seed: u64,
) -> Result<EfficiencyReport> {
    if study_y.model != study_z.model {
        return Err(MleError::MismatchedStudies("models differ"));
    }
    if study_y.mode != LikelihoodMode::Multiclass {
        return Err(MleError::MismatchedStudies("first study must be multiclass"));
    }
    if !matches!(study_z.mode, LikelihoodMode::Binary { target } if target == study_z.target) {
        return Err(MleError::MismatchedStudies("second study must be binary"));
    }
    if study_y.n != study_z.n {
        return Err(MleError::MismatchedStudies("sample sizes differ"));
    }
    if study_y.true_theta != study_z.true_theta {
        return Err(MleError::MismatchedStudies("true parameters differ"));
    }
    if study_y.probe_x != study_z.probe_x {
        return Err(MleError::MismatchedStudies("probe points differ"));
    }
    if study_y.target != study_z.target {
        return Err(MleError::MismatchedStudies("target classes differ"));
    }
    // compute parity: identical optimizer configuration in both arms
    if study_y.cfg != study_z.cfg {
        return Err(MleError::MismatchedStudies("fit configurations differ"));
    }
    for s in [study_y, study_z] {
        let excluded = s.non_converged();
        if (excluded as f64) > EXCLUSION_LIMIT * s.trials.len() as f64 {
            return Err(MleError::TooManyExclusions {
                excluded,
                trials: s.trials.len(),
                limit: EXCLUSION_LIMIT * 100.0,
            });
        }
    }

    let model = &study_y.model;
    let target = study_y.target;
    let mut fisher_rng = rng::stream(seed, &[TAG_FISHER]);
    let inputs: Vec<Vec<f64>> = (0..fisher_inputs)
        .map(|_| dist.sample(&mut fisher_rng))
        .collect();
    let fisher_y =
        info::expected_fisher(model, &study_y.true_theta, &inputs, FisherMode::Multiclass)?;
    let fisher_z = info::expected_fisher(
        model,
        &study_y.true_theta,
        &inputs,
        FisherMode::Binary { target },
    )?;
    let dv_y = delta_variance(model, &study_y.true_theta, &fisher_y, &study_y.probe_x, target)?;
    let dv_z = delta_variance(model, &study_y.true_theta, &fisher_z, &study_y.probe_x, target)?;

    let tau_star = study_y.tau_star();
    let sqrt_n = (study_y.n as f64).sqrt();
    let taus_y: Vec<f64> = study_y
        .converged_trials()
        .map(|t| sqrt_n * (t.tau_hat - tau_star))
        .collect();
    let taus_z: Vec<f64> = study_z
        .converged_trials()
        .map(|t| sqrt_n * (t.tau_hat - tau_star))
        .collect();
    let var_y = sample_variance(&taus_y);
    let var_z = sample_variance(&taus_z);
    let ratio = var_y / var_z;

    // percentile bootstrap on the variance ratio, resampling each arm
    let mut boot_rng = rng::stream(seed, &[TAG_BOOTSTRAP]);
    let mut ratios = Vec::with_capacity(bootstrap_resamples);
    for _ in 0..bootstrap_resamples {
        let vy = resampled_variance(&taus_y, &mut boot_rng);
        let vz = resampled_variance(&taus_z, &mut boot_rng);
        if vz > 0.0 {
            ratios.push(vy / vz);
        }
    }
    ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let ci_low = percentile(&ratios, 0.025);
    let ci_high = percentile(&ratios, 0.975);

    let theoretical_holds = dv_y.variance <= dv_z.variance + 1e-12;
    let empirical_strict = ratio < 1.0 && ci_high < 1.0;

    Ok(EfficiencyReport {
        multiclass: ArmSummary {
            label: "multiclass",
            n: study_y.n,
            trials: study_y.trials.len(),
            excluded: study_y.non_converged(),
            empirical_var_tau: var_y,
            theoretical_var_tau: dv_y.variance,
            empirical_covariance: study_y.empirical_covariance(),
            fisher: fisher_y,
        },
        binary: ArmSummary {
            label: "binary",
            n: study_z.n,
            trials: study_z.trials.len(),
            excluded: study_z.non_converged(),
            empirical_var_tau: var_z,
            theoretical_var_tau: dv_z.variance,
            empirical_covariance: study_z.empirical_covariance(),
            fisher: fisher_z,
        },
        empirical_ratio: ratio,
        ci_low,
        ci_high,
        bootstrap_resamples,
        theoretical_holds,
        empirical_strict,
        tau_star,
        seed,
    })
}

fn resampled_variance(vals: &[f64], rng: &mut impl Rng) -> f64 {
    let m = vals.len();
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for _ in 0..m {
        let v = vals[rng.random_range(0..m)];
        sum += v;
        sumsq += v * v;
    }
    let mean = sum / m as f64;
    (sumsq - m as f64 * mean * mean) / (m as f64 - 1.0)
}

/// Linear-interpolated percentile of a sorted slice.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 >= sorted.len() {
        sorted[sorted.len() - 1]
    } else {
        sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac
    }
}

// ---------------------------------------------------------------------------
// CSV output
// ---------------------------------------------------------------------------

/// One row per trial: `trial_id,converged,tau_hat,theta_0,...`.
pub fn write_trials_csv<W: Write>(study: &MleStudy, w: &mut W) -> io::Result<()> {
    let p = study.true_theta.len();
    let header: Vec<String> = ["trial_id", "converged", "tau_hat"]
        .iter()
        .map(|s| s.to_string())
        .chain((0..p).map(|i| format!("theta_{i}")))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for t in &study.trials {
        let mut row = vec![
            t.trial.to_string(),
            (t.converged as u8).to_string(),
            format!("{:.16e}", t.tau_hat),
        ];
        row.extend(t.theta_hat.iter().map(|v| format!("{v:.16e}")));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Two-row summary, one per arm; `ratio` is this arm's variance over the
/// other arm's.
pub fn write_summary_csv<W: Write>(report: &EfficiencyReport, w: &mut W) -> io::Result<()> {
    writeln!(
        w,
        "arm,n,trials,excluded,empirical_var_tau,theoretical_var_tau,ratio,ci_low,ci_high,verdict"
    )?;
    let rows = [
        (&report.multiclass, report.empirical_ratio),
        (&report.binary, 1.0 / report.empirical_ratio),
    ];
    for (arm, ratio) in rows {
        writeln!(
            w,
            "{},{},{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
            arm.label,
            arm.n,
            arm.trials,
            arm.excluded,
            arm.empirical_var_tau,
            arm.theoretical_var_tau,
            ratio,
            report.ci_low,
            report.ci_high,
            if report.theoretical_holds { "holds" } else { "fails" }
        )?;
    }
    Ok(())
}
