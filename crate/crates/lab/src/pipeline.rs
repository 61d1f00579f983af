//! Session + attack replicates and their aggregation.
//!
//! Replicate `r` owns the stream `root.fork(r)` and splits it further by
//! purpose, so every replicate is reproducible on its own and results do not
//! depend on scheduling.

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use privlab_core::attack::{run_dlg, AttackTrace};
use privlab_core::complexity::{
    attack_complexity, estimate_constants, gradient_distortion, privacy_leakage, protection_complexity_mc,
    AttackComplexity, ComplexityReport, ComplexityVariant, ConstantEstimates,
};
use privlab_core::federated::{run_session, ClientDataset, RoundRecord};
use privlab_core::numerics::RngStream;
use privlab_core::Result;

use crate::config::ExperimentConfig;
use crate::data::generate_clients;

const DATA: u64 = 0;
const THETA: u64 = 1;
const SESSION: u64 = 2;
const ATTACK: u64 = 3;
const PROTECTION: u64 = 4;
const CONSTANTS: u64 = 5;
const MBP: u64 = 6;

pub fn root_stream(seed: u64) -> RngStream {
    RngStream::new(seed, 0)
}

/// Everything one replicate produced.
#[derive(Debug, Clone)]
pub struct Replicate {
    pub index: usize,
    pub stream_id: u64,
    pub clients: Vec<ClientDataset>,
    pub rounds: Vec<RoundRecord>,
    /// Parameters the attacked upload was computed at.
    pub theta_star: Vec<f64>,
    pub trace: AttackTrace,
    pub delta_k: f64,
    pub protection_c: f64,
}

impl Replicate {
    pub fn target(&self, cfg: &ExperimentConfig) -> &ClientDataset {
        &self.clients[cfg.clients.target]
    }
}

pub fn initial_theta(cfg: &ExperimentConfig, rng: &mut RngStream) -> Vec<f64> {
    (0..cfg.model.param_dim())
        .map(|_| cfg.session.theta_scale * rng.standard_normal())
        .collect()
}

/// Stream for the MBP simulation of replicate 0.
pub fn mbp_stream(seed: u64) -> RngStream {
    root_stream(seed).fork(0).fork(MBP)
}

/// Data and FedSGD session of replicate `index`, without the attack.
pub fn replicate_session(cfg: &ExperimentConfig, index: usize) -> Result<(RngStream, Vec<ClientDataset>, Vec<RoundRecord>)> {
    let rep = root_stream(cfg.seed).fork(index as u64);
    let clients = generate_clients(&cfg.model, &cfg.clients, &rep.fork(DATA))?;
    let theta0 = initial_theta(cfg, &mut rep.fork(THETA));
    let rounds = run_session(
        &cfg.model,
        &theta0,
        &clients,
        &cfg.mechanism,
        cfg.session.lr,
        cfg.session.rounds,
        &rep.fork(SESSION),
    )?;
    Ok((rep, clients, rounds))
}

pub fn run_replicate(cfg: &ExperimentConfig, index: usize) -> Result<Replicate> {
    let (rep, clients, rounds) = replicate_session(cfg, index)?;
    let last = rounds.last().expect("at least one round");
    let upload = &last.per_client[cfg.clients.target];
    let theta_star = last.theta_before.to_vec();

    let attack = cfg.attack.clone().with_seed(rep.fork(ATTACK).next_u64());
    let trace = run_dlg(
        &cfg.model,
        &theta_star,
        &upload.w_protected,
        &clients[cfg.clients.target],
        &attack,
    )?;
    let delta_k = gradient_distortion(&upload.w_original, &upload.w_protected)?;
    let protection_c = protection_complexity_mc(
        &cfg.mechanism,
        &upload.w_original,
        cfg.complexity.protection_trials,
        &mut rep.fork(PROTECTION),
    )?;
    Ok(Replicate {
        index,
        stream_id: rep.stream_id(),
        clients,
        rounds,
        theta_star,
        trace,
        delta_k,
        protection_c,
    })
}

/// All replicates, in index order, on the current rayon pool.
pub fn run_replicates(cfg: &ExperimentConfig) -> Result<Vec<Replicate>> {
    (0..cfg.replicates)
        .into_par_iter()
        .map(|r| run_replicate(cfg, r))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSummary {
    pub replicate: usize,
    pub stream_id: u64,
    pub s_k_tau: AttackComplexity,
    pub delta_k: f64,
    pub protection_c: f64,
    pub final_mean_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexitySummary {
    pub report: ComplexityReport,
    pub s_k_tau_last_iterate: AttackComplexity,
    pub constants: Option<ConstantEstimates>,
    /// Why the constants could not be fitted, if they could not.
    pub constants_error: Option<String>,
    pub model_dim: usize,
    pub per_replicate: Vec<ReplicateSummary>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

pub fn summarize(cfg: &ExperimentConfig, reps: &[Replicate]) -> Result<ComplexitySummary> {
    let tau = cfg.attack.tau;
    let traces: Vec<AttackTrace> = reps.iter().map(|r| r.trace.clone()).collect();
    let report = ComplexityReport {
        s_k_tau: attack_complexity(&traces, tau, cfg.complexity.variant)?,
        epsilon_p: privacy_leakage(&traces, tau, cfg.attack.max_iters, cfg.complexity.clamp)?,
        delta_k: mean(reps.iter().map(|r| r.delta_k)),
        protection_c: mean(reps.iter().map(|r| r.protection_c)),
        tau,
        gamma: cfg.complexity.gamma,
        dataset_size: cfg.clients.samples_per_client,
        variant: cfg.complexity.variant,
    };
    let first = &reps[0];
    let label = first.target(cfg).samples()[0].y;
    let (constants, constants_error) = match estimate_constants(
        &cfg.model,
        &first.theta_star,
        label,
        cfg.complexity.bilipschitz_pairs,
        &first.trace,
        &mut root_stream(cfg.seed).fork(0).fork(CONSTANTS),
    ) {
        Ok(c) => (Some(c), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let per_replicate = reps
        .iter()
        .map(|r| {
            Ok(ReplicateSummary {
                replicate: r.index,
                stream_id: r.stream_id,
                s_k_tau: attack_complexity(std::slice::from_ref(&r.trace), tau, cfg.complexity.variant)?,
                delta_k: r.delta_k,
                protection_c: r.protection_c,
                final_mean_error: r.trace.mean_error(r.trace.iterations() - 1),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ComplexitySummary {
        report,
        s_k_tau_last_iterate: attack_complexity(&traces, tau, ComplexityVariant::LastIterate)?,
        constants,
        constants_error,
        model_dim: cfg.model.param_dim(),
        per_replicate,
    })
}
