//! Gradient-inversion (DLG) attacker.
//!
//! The optimizer only sees the model, the released gradient and the label
//! vector. The client's true samples enter through a scoring callback that
//! records per-iteration reconstruction errors and never feeds back into the
//! descent.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::federated::ClientDataset;
use crate::models::{self, ModelSpec};
use crate::numerics::{check_finite, check_same_dim, norm_unchecked, squared_distance, RngStream, Vector};

/// PSNR reported for (numerically) exact reconstructions.
pub const PSNR_CAP: f64 = 300.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Mse,
    Psnr,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetric {
    pub kind: MetricKind,
    /// Signal peak for PSNR.
    pub peak: f64,
}

impl ErrorMetric {
    pub const MSE: ErrorMetric = ErrorMetric {
        kind: MetricKind::Mse,
        peak: 1.0,
    };

    pub fn psnr(peak: f64) -> Self {
        Self {
            kind: MetricKind::Psnr,
            peak,
        }
    }

    /// True when smaller values mean a better reconstruction.
    pub fn is_distance(&self) -> bool {
        self.kind == MetricKind::Mse
    }
}

/// Reconstruction error between `x_hat` and `x`.
pub fn error(metric: ErrorMetric, x_hat: &[f64], x: &[f64]) -> Result<f64> {
    check_same_dim(x_hat, x, "error")?;
    if x.is_empty() {
        return invalid("error of empty vectors");
    }
    Ok(error_unchecked(metric, x_hat, x))
}

fn error_unchecked(metric: ErrorMetric, x_hat: &[f64], x: &[f64]) -> f64 {
    let mse = squared_distance(x_hat, x) / x.len() as f64;
    match metric.kind {
        MetricKind::Mse => mse,
        MetricKind::Psnr if mse < 1e-30 => PSNR_CAP,
        MetricKind::Psnr => (10.0 * (metric.peak * metric.peak / mse).log10()).min(PSNR_CAP),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackInit {
    GaussianRandom,
    Zeros,
    /// Start from an explicit point; see [`run_dlg_from`].
    WarmStart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub max_iters: usize,
    pub step_size: f64,
    #[serde(default = "default_init")]
    pub init: AttackInit,
    /// Standard deviation of the random initialization.
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    #[serde(default = "default_metric")]
    pub metric: MetricKind,
    #[serde(default = "default_peak")]
    pub psnr_peak: f64,
    pub tau: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_clamp")]
    pub clamp_box: bool,
}

fn default_init() -> AttackInit {
    AttackInit::GaussianRandom
}
fn default_init_scale() -> f64 {
    0.1
}
fn default_metric() -> MetricKind {
    MetricKind::Mse
}
fn default_peak() -> f64 {
    1.0
}
fn default_clamp() -> bool {
    true
}

impl AttackConfig {
    pub fn new(max_iters: usize, step_size: f64, tau: f64) -> Self {
        Self {
            max_iters,
            step_size,
            init: default_init(),
            init_scale: default_init_scale(),
            metric: default_metric(),
            psnr_peak: default_peak(),
            tau,
            seed: 0,
            clamp_box: default_clamp(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn error_metric(&self) -> ErrorMetric {
        ErrorMetric {
            kind: self.metric,
            peak: self.psnr_peak,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return invalid("attack.max_iters must be >= 1");
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return invalid("attack.step_size must be > 0");
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return invalid("attack.tau must be > 0");
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return invalid("attack.init_scale must be >= 0");
        }
        if !(self.psnr_peak > 0.0 && self.psnr_peak.is_finite()) {
            return invalid("attack.psnr_peak must be > 0");
        }
        Ok(())
    }
}

/// Record of one attack run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackTrace {
    pub metric: MetricKind,
    pub tau: f64,
    /// Row `t - 1` holds `d(X_t,i, X_i)` for every sample `i` after step `t`.
    pub per_iter_errors: Vec<Vec<f64>>,
    /// Gradient-matching objective after each step.
    pub per_iter_objective: Vec<f64>,
    /// `||grad L(X_t) - grad L(X_final)||`, using the final iterate as a
    /// stand-in for the unknown dataset behind the released gradient.
    pub per_iter_grad_mismatch: Vec<f64>,
    pub final_reconstruction: Vec<Vector>,
    /// First 1-based iteration whose mean error meets `tau`.
    pub converged_iter: Option<usize>,
}

impl AttackTrace {
    pub fn iterations(&self) -> usize {
        self.per_iter_errors.len()
    }

    pub fn samples(&self) -> usize {
        self.per_iter_errors.first().map_or(0, Vec::len)
    }

    pub fn mean_error(&self, row: usize) -> f64 {
        let r = &self.per_iter_errors[row];
        r.iter().sum::<f64>() / r.len() as f64
    }

    pub fn final_errors(&self) -> &[f64] {
        self.per_iter_errors.last().map_or(&[], Vec::as_slice)
    }

    /// Keeps every `stride`-th iteration (1st, 1+stride, ...) plus the last.
    pub fn downsampled(&self, stride: usize) -> AttackTrace {
        let stride = stride.max(1);
        let n = self.iterations();
        let keep: Vec<usize> = (0..n).filter(|t| t % stride == 0 || *t + 1 == n).collect();
        let pick = |v: &Vec<f64>| keep.iter().map(|&t| v[t]).collect::<Vec<f64>>();
        AttackTrace {
            metric: self.metric,
            tau: self.tau,
            per_iter_errors: keep.iter().map(|&t| self.per_iter_errors[t].clone()).collect(),
            per_iter_objective: pick(&self.per_iter_objective),
            per_iter_grad_mismatch: pick(&self.per_iter_grad_mismatch),
            final_reconstruction: self.final_reconstruction.clone(),
            converged_iter: self.converged_iter,
        }
    }
}

/// What the attacker is allowed to know.
struct GradientMatcher<'a> {
    spec: &'a ModelSpec,
    theta: &'a [f64],
    observed: &'a [f64],
    labels: &'a [usize],
}

impl GradientMatcher<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        models::match_value_unchecked(self.spec, self.theta, x, self.labels, self.observed)
    }

    fn input_grad(&self, x: &[f64]) -> Result<Vector> {
        models::grad_match_input_grad(self.spec, self.theta, x, self.labels, self.observed)
    }

    fn param_grad(&self, x: &[f64]) -> Vec<f64> {
        models::flat_loss_and_grad(self.spec, self.theta, x, self.labels).1
    }

    /// Plain gradient descent. `observe` sees each iterate after its step.
    fn descend<F>(&self, x0: Vec<f64>, config: &AttackConfig, mut observe: F) -> std::result::Result<Vec<Vec<f64>>, usize>
    where
        F: FnMut(&[f64], f64),
    {
        let mut x = x0;
        let mut iterates = Vec::with_capacity(config.max_iters);
        for t in 0..config.max_iters {
            let step = match self.input_grad(&x) {
                Ok(g) => g,
                Err(_) => return Err(t),
            };
            for (xi, gi) in x.iter_mut().zip(step.iter()) {
                *xi -= config.step_size * gi;
                if config.clamp_box {
                    *xi = xi.clamp(0.0, 1.0);
                }
            }
            let value = self.value(&x);
            if !value.is_finite() || x.iter().any(|v| !v.is_finite()) {
                return Err(t);
            }
            observe(&x, value);
            iterates.push(x.clone());
        }
        Ok(iterates)
    }
}

fn initial_point(n: usize, config: &AttackConfig) -> Result<Vec<f64>> {
    match config.init {
        AttackInit::Zeros => Ok(vec![0.0; n]),
        AttackInit::GaussianRandom => {
            let mut rng = RngStream::new(config.seed, 0);
            Ok((0..n).map(|_| config.init_scale * rng.standard_normal()).collect())
        }
        AttackInit::WarmStart => invalid("warm_start needs an explicit start point (run_dlg_from)"),
    }
}

/// Runs DLG against `observed_grad` and scores each iterate against `target`.
pub fn run_dlg(
    spec: &ModelSpec,
    theta: &[f64],
    observed_grad: &[f64],
    target: &ClientDataset,
    config: &AttackConfig,
) -> Result<AttackTrace> {
    config.validate()?;
    let x0 = initial_point(target.weight() * spec.input_dim, config)?;
    run_dlg_from(spec, theta, observed_grad, target, config, x0)
}

/// [`run_dlg`] from an explicit flat start point.
pub fn run_dlg_from(
    spec: &ModelSpec,
    theta: &[f64],
    observed_grad: &[f64],
    target: &ClientDataset,
    config: &AttackConfig,
    start: Vec<f64>,
) -> Result<AttackTrace> {
    config.validate()?;
    let labels = target.labels();
    // validates shapes of theta, start, labels and gradient together
    models::grad_match_value(spec, theta, &start, &labels, observed_grad)?;
    check_finite(&start)?;
    check_finite(observed_grad)?;

    let metric = config.error_metric();
    let d = spec.input_dim;
    let truth = target.samples();
    let mut errors: Vec<Vec<f64>> = Vec::with_capacity(config.max_iters);
    let mut objective = Vec::with_capacity(config.max_iters);
    let score = |x: &[f64], value: f64| {
        errors.push(
            truth
                .iter()
                .enumerate()
                .map(|(i, s)| error_unchecked(metric, &x[i * d..(i + 1) * d], &s.x))
                .collect(),
        );
        objective.push(value);
    };

    let matcher = GradientMatcher {
        spec,
        theta,
        observed: observed_grad,
        labels: &labels,
    };
    let outcome = matcher.descend(start.clone(), config, score);
    let (iterates, diverged_at) = match outcome {
        Ok(it) => (it, None),
        Err(t) => {
            // replay to recover the finite prefix; cheaper than keeping both paths
            let mut replay = Vec::new();
            let mut x = start;
            for _ in 0..t {
                let g = matcher.input_grad(&x)?;
                for (xi, gi) in x.iter_mut().zip(g.iter()) {
                    *xi -= config.step_size * gi;
                    if config.clamp_box {
                        *xi = xi.clamp(0.0, 1.0);
                    }
                }
                replay.push(x.clone());
            }
            (replay, Some(t))
        }
    };

    let mismatch = match iterates.last() {
        Some(last) => {
            let g_final = matcher.param_grad(last);
            iterates
                .iter()
                .map(|x| {
                    let g = matcher.param_grad(x);
                    norm_unchecked(&g.iter().zip(&g_final).map(|(a, b)| a - b).collect::<Vec<_>>())
                })
                .collect()
        }
        None => Vec::new(),
    };
    let final_reconstruction = iterates
        .last()
        .map(|x| x.chunks(d).map(|c| Vector::from_finite(c.to_vec())).collect())
        .unwrap_or_default();
    let converged_iter = errors.iter().position(|row| {
        let mean = row.iter().sum::<f64>() / row.len() as f64;
        if metric.is_distance() {
            mean <= config.tau
        } else {
            mean >= config.tau
        }
    });

    let trace = AttackTrace {
        metric: config.metric,
        tau: config.tau,
        per_iter_errors: errors,
        per_iter_objective: objective,
        per_iter_grad_mismatch: mismatch,
        final_reconstruction,
        converged_iter: converged_iter.map(|t| t + 1),
    };
    match diverged_at {
        None => Ok(trace),
        Some(iteration) => Err(Error::Diverged {
            iteration: iteration + 1,
            partial: Box::new(trace),
        }),
    }
}
