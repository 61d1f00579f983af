//! Maximum Bayesian Privacy estimated by attack simulation.
//!
//! For every data point `d`, the attacker is run `t_sim` times against
//! freshly protected gradients of a batch containing `d`. The fraction of
//! batch slots reconstructed within `omega` of `d` estimates the conditional
//! `kappa(d)`, and `epsilon_hat = max_d |ln(kappa(d) / prior(d))|`.

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{error, run_dlg, AttackConfig, ErrorMetric};
use crate::error::{invalid, Error, Result};
use crate::federated::ClientDataset;
use crate::models::{loss_and_param_grad, LabeledSample, ModelSpec};
use crate::numerics::{norm_unchecked, RngStream};
use crate::protection::{apply, MechanismConfig};

const PRIOR_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MbpConfig {
    pub t_sim: usize,
    /// Success threshold on the reconstruction MSE.
    pub omega: f64,
    #[serde(default = "one")]
    pub batch_size: usize,
    /// Attacker prior over the dataset; uniform when absent.
    #[serde(default)]
    pub prior: Option<Vec<f64>>,
    pub delta: f64,
    #[serde(default = "unit")]
    pub c_const: f64,
    /// Clamp estimates half a count away from 0 and 1 before taking logs.
    #[serde(default = "yes")]
    pub smoothing: bool,
}

fn one() -> usize {
    1
}
fn unit() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}

impl MbpConfig {
    pub fn new(t_sim: usize, omega: f64, delta: f64) -> Self {
        Self {
            t_sim,
            omega,
            batch_size: 1,
            prior: None,
            delta,
            c_const: 1.0,
            smoothing: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_sim == 0 {
            return invalid("mbp.t_sim must be >= 1");
        }
        if self.batch_size == 0 {
            return invalid("mbp.batch_size must be >= 1");
        }
        // omega = 0 is a legal (impossible) threshold
        if !(self.omega >= 0.0) {
            return invalid("mbp.omega must be >= 0");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return invalid("mbp.delta must lie in (0, 1)");
        }
        if !(self.c_const > 0.0 && self.c_const.is_finite()) {
            return invalid("mbp.c_const must be > 0");
        }
        if let Some(p) = &self.prior {
            validate_prior(p)?;
        }
        Ok(())
    }

    /// The configured prior, or uniform over `n` points.
    pub fn prior_for(&self, n: usize) -> Result<Vec<f64>> {
        match &self.prior {
            Some(p) if p.len() != n => invalid(format!(
                "prior has {} entries, dataset has {n} points",
                p.len()
            )),
            Some(p) => Ok(p.clone()),
            None => Ok(vec![1.0 / n as f64; n]),
        }
    }

    fn slots(&self) -> usize {
        self.t_sim * self.batch_size
    }
}

pub fn validate_prior(prior: &[f64]) -> Result<()> {
    if prior.is_empty() {
        return invalid("prior is empty");
    }
    if prior.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
        return invalid("prior entries must be > 0");
    }
    let sum: f64 = prior.iter().sum();
    if (sum - 1.0).abs() > PRIOR_TOLERANCE {
        return invalid(format!("prior sums to {sum}, expected 1"));
    }
    Ok(())
}

/// Raw simulation outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalEstimate {
    pub kappa_hat: Vec<f64>,
    pub success_counts: Vec<u64>,
    pub t_sim: usize,
    pub batch_size: usize,
    /// `trial_errors[d][t]` holds the MSE of every batch slot against point
    /// `d`, or `None` when that attack diverged.
    pub trial_errors: Vec<Vec<Option<Vec<f64>>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MbpEstimate {
    pub kappa_hat: Vec<f64>,
    pub kappa_smoothed: Vec<f64>,
    pub epsilon_hat: f64,
    pub zeta: f64,
    pub success_counts: Vec<u64>,
    pub trials_total: u64,
    pub t_sim: usize,
    pub batch_size: usize,
    pub omega: f64,
    pub delta: f64,
    pub c_const: f64,
    pub prior: Vec<f64>,
}

/// Batch for point `d`: `d` followed by the next `size - 1` points, wrapping.
fn batch_for(dataset: &[LabeledSample], d: usize, size: usize) -> Vec<LabeledSample> {
    (0..size).map(|k| dataset[(d + k) % dataset.len()].clone()).collect()
}

/// One simulated reconstruction; `None` if the attacker diverged.
fn simulate(
    spec: &ModelSpec,
    theta: &[f64],
    mechanism: &MechanismConfig,
    batch: &ClientDataset,
    point: &[f64],
    attack: &AttackConfig,
    rng: &mut RngStream,
) -> Result<Option<Vec<f64>>> {
    let (_, g) = loss_and_param_grad(spec, theta, batch.samples())?;
    let mut released = apply(mechanism, &g, rng)?.into_vec();
    if mechanism.normalize_to_sphere {
        // the attacker is granted the true gradient norm
        let scale = norm_unchecked(&g);
        released.iter_mut().for_each(|v| *v *= scale);
    }
    let cfg = attack.clone().with_seed(rng.next_u64());
    match run_dlg(spec, theta, &released, batch, &cfg) {
        Ok(trace) => {
            let errs = trace
                .final_reconstruction
                .iter()
                .map(|x_hat| error(ErrorMetric::MSE, x_hat, point))
                .collect::<Result<Vec<_>>>()?;
            Ok(Some(errs))
        }
        Err(Error::Diverged { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Estimates `kappa(d)` for every point of `dataset` at the released `theta`.
///
/// Trial `t` for point `d` draws from `rng.fork(d * t_sim + t)`.
pub fn estimate_conditional(
    spec: &ModelSpec,
    theta: &[f64],
    mechanism: &MechanismConfig,
    dataset: &[LabeledSample],
    attack: &AttackConfig,
    config: &MbpConfig,
    rng: &RngStream,
) -> Result<ConditionalEstimate> {
    if dataset.is_empty() {
        return invalid("dataset is empty");
    }
    config.validate()?;
    attack.validate()?;
    mechanism.validate()?;
    spec.validate()?;
    dataset.iter().try_for_each(|s| s.check_against(spec))?;

    let n = dataset.len();
    let t_sim = config.t_sim;
    let batches = (0..n)
        .map(|d| ClientDataset::new(d as u32, batch_for(dataset, d, config.batch_size)))
        .collect::<Result<Vec<_>>>()?;

    let flat: Vec<Option<Vec<f64>>> = (0..n * t_sim)
        .into_par_iter()
        .map(|job| {
            let d = job / t_sim;
            let mut stream = rng.fork(job as u64);
            simulate(spec, theta, mechanism, &batches[d], &dataset[d].x, attack, &mut stream)
        })
        .collect::<Result<_>>()?;

    let trial_errors: Vec<Vec<Option<Vec<f64>>>> = flat.chunks(t_sim).map(|c| c.to_vec()).collect();
    let success_counts: Vec<u64> = trial_errors
        .iter()
        .map(|trials| {
            trials
                .iter()
                .flatten()
                .map(|slots| slots.iter().filter(|e| **e < config.omega).count() as u64)
                .sum()
        })
        .collect();
    let slots = config.slots() as f64;
    Ok(ConditionalEstimate {
        kappa_hat: success_counts.iter().map(|c| *c as f64 / slots).collect(),
        success_counts,
        t_sim,
        batch_size: config.batch_size,
        trial_errors,
    })
}

/// Clamp `kappa` into `[1/(2n), 1 - 1/(2n)]` for `n` slots.
pub fn smooth(kappa: f64, slots: usize) -> f64 {
    let half = 0.5 / slots as f64;
    kappa.max(half).min(1.0 - half)
}

/// `max_d |ln(kappa(d) / prior(d))|`. With `smoothing_slots`, each kappa is
/// first passed through [`smooth`]; without it a zero kappa is an error.
pub fn estimate_mbp(kappa_hat: &[f64], prior: &[f64], smoothing_slots: Option<usize>) -> Result<f64> {
    validate_prior(prior)?;
    if kappa_hat.len() != prior.len() {
        return invalid(format!(
            "{} kappa estimates for {} prior entries",
            kappa_hat.len(),
            prior.len()
        ));
    }
    if kappa_hat.iter().any(|k| !(0.0..=1.0).contains(k)) {
        return invalid("kappa estimates must lie in [0, 1]");
    }
    if smoothing_slots == Some(0) {
        return invalid("smoothing needs at least one slot");
    }
    let mut worst = 0.0f64;
    for (k, p) in kappa_hat.iter().zip(prior) {
        let k = smoothing_slots.map_or(*k, |s| smooth(*k, s));
        if k == 0.0 {
            return Err(Error::EstimationFailed(
                "zero success count without smoothing".into(),
            ));
        }
        worst = worst.max((k / p).ln().abs());
    }
    Ok(worst)
}

/// `zeta = c * sqrt(ln(2/delta) / t_sim)`.
pub fn estimation_half_width(delta: f64, t_sim: usize, c_const: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return invalid("delta must lie in (0, 1)");
    }
    if t_sim == 0 {
        return invalid("t_sim must be >= 1");
    }
    if !(c_const > 0.0 && c_const.is_finite()) {
        return invalid("c_const must be > 0");
    }
    Ok(c_const * ((2.0 / delta).ln() / t_sim as f64).sqrt())
}

/// `max(0, 1 - 2 exp(-beta^2 t_sim kappa / 3))`.
pub fn reliability_probability(beta: f64, t_sim: usize, kappa1: f64) -> Result<f64> {
    if !(beta > 0.0 && beta.is_finite()) {
        return invalid("beta must be > 0");
    }
    if t_sim == 0 {
        return invalid("t_sim must be >= 1");
    }
    if !(kappa1 > 0.0 && kappa1 <= 1.0) {
        return invalid("kappa1 must lie in (0, 1]");
    }
    Ok((1.0 - 2.0 * (-beta * beta * t_sim as f64 * kappa1 / 3.0).exp()).max(0.0))
}

/// Full pipeline: simulate, smooth, and attach the half-width.
pub fn estimate(
    spec: &ModelSpec,
    theta: &[f64],
    mechanism: &MechanismConfig,
    dataset: &[LabeledSample],
    attack: &AttackConfig,
    config: &MbpConfig,
    rng: &RngStream,
) -> Result<(MbpEstimate, ConditionalEstimate)> {
    let cond = estimate_conditional(spec, theta, mechanism, dataset, attack, config, rng)?;
    let prior = config.prior_for(dataset.len())?;
    let slots = config.slots();
    let smoothing = config.smoothing.then_some(slots);
    let epsilon_hat = estimate_mbp(&cond.kappa_hat, &prior, smoothing)?;
    let kappa_smoothed = cond
        .kappa_hat
        .iter()
        .map(|k| smoothing.map_or(*k, |s| smooth(*k, s)))
        .collect();
    let est = MbpEstimate {
        kappa_hat: cond.kappa_hat.clone(),
        kappa_smoothed,
        epsilon_hat,
        zeta: estimation_half_width(config.delta, config.t_sim, config.c_const)?,
        success_counts: cond.success_counts.clone(),
        trials_total: (dataset.len() * config.t_sim) as u64,
        t_sim: config.t_sim,
        batch_size: config.batch_size,
        omega: config.omega,
        delta: config.delta,
        c_const: config.c_const,
        prior,
    };
    Ok((est, cond))
}
