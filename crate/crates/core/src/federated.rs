//! Single-process FedSGD with full participation.
//!
//! Each round every client computes its mean batch gradient, passes it
//! through the protection mechanism and uploads it. The server applies one
//! gradient step with the size-weighted mean of the protected uploads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::models::{loss_and_param_grad, LabeledSample, ModelSpec};
use crate::numerics::{check_finite, RngStream, Vector};
use crate::protection::{apply, MechanismConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientDataset {
    pub client_id: u32,
    samples: Vec<LabeledSample>,
}

impl ClientDataset {
    pub fn new(client_id: u32, samples: Vec<LabeledSample>) -> Result<Self> {
        let Some(first) = samples.first() else {
            return invalid(format!("client {client_id} has no samples"));
        };
        let dim = first.x.dim();
        if samples.iter().any(|s| s.x.dim() != dim) {
            return invalid(format!("client {client_id} mixes feature dimensions"));
        }
        Ok(Self { client_id, samples })
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    /// Aggregation weight `m_k`, the local sample count.
    pub fn weight(&self) -> usize {
        self.samples.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.y).collect()
    }

    fn check_against(&self, spec: &ModelSpec) -> Result<()> {
        self.samples.iter().try_for_each(|s| s.check_against(spec))
    }
}

/// What one client sent in one round. `w_original` is kept for scoring only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientUpload {
    pub client_id: u32,
    pub w_original: Vector,
    pub w_protected: Vector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round_index: usize,
    pub per_client: Vec<ClientUpload>,
    pub theta_before: Vector,
    pub theta_after: Vector,
}

/// Size-weighted mean of the protected uploads, reduced in client order.
pub fn weighted_mean(uploads: &[(usize, &[f64])]) -> Result<Vec<f64>> {
    let Some((_, first)) = uploads.first() else {
        return invalid("no uploads to aggregate");
    };
    let total: usize = uploads.iter().map(|(w, _)| w).sum();
    let mut agg = vec![0.0; first.len()];
    for (weight, g) in uploads {
        let share = *weight as f64 / total as f64;
        for (a, v) in agg.iter_mut().zip(g.iter()) {
            *a += share * v;
        }
    }
    Ok(agg)
}

/// One FedSGD round. Client `i` (by position) draws mechanism noise from
/// `rng.fork(i)`, so results do not depend on the worker count.
pub fn run_round(
    spec: &ModelSpec,
    theta: &[f64],
    clients: &[ClientDataset],
    mechanism: &MechanismConfig,
    lr: f64,
    round_index: usize,
    rng: &RngStream,
) -> Result<RoundRecord> {
    if clients.is_empty() {
        return invalid("no clients");
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return invalid(format!("learning rate must be > 0, got {lr}"));
    }
    spec.validate()?;
    mechanism.validate()?;
    check_finite(theta)?;
    for c in clients {
        c.check_against(spec)?;
    }

    let per_client = clients
        .par_iter()
        .enumerate()
        .map(|(i, client)| {
            let (_, w_original) = loss_and_param_grad(spec, theta, client.samples())?;
            let mut stream = rng.fork(i as u64);
            let w_protected = apply(mechanism, &w_original, &mut stream)?;
            Ok(ClientUpload {
                client_id: client.client_id,
                w_original,
                w_protected,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let weighted: Vec<(usize, &[f64])> = clients
        .iter()
        .zip(&per_client)
        .map(|(c, u)| (c.weight(), u.w_protected.as_slice()))
        .collect();
    let agg = weighted_mean(&weighted)?;
    let after: Vec<f64> = theta.iter().zip(&agg).map(|(t, g)| t - lr * g).collect();
    check_finite(&after)?;

    Ok(RoundRecord {
        round_index,
        per_client,
        theta_before: Vector::new(theta.to_vec())?,
        theta_after: Vector::from_finite(after),
    })
}

/// `rounds` sequential FedSGD rounds; round `r` uses `rng.fork(r)`.
pub fn run_session(
    spec: &ModelSpec,
    theta0: &[f64],
    clients: &[ClientDataset],
    mechanism: &MechanismConfig,
    lr: f64,
    rounds: usize,
    rng: &RngStream,
) -> Result<Vec<RoundRecord>> {
    if rounds == 0 {
        return invalid("rounds must be >= 1");
    }
    let mut theta = theta0.to_vec();
    let mut records = Vec::with_capacity(rounds);
    for r in 0..rounds {
        let rec = run_round(spec, &theta, clients, mechanism, lr, r, &rng.fork(r as u64))?;
        theta = rec.theta_after.to_vec();
        records.push(rec);
    }
    Ok(records)
}

/// Size-weighted training loss over all clients.
pub fn federated_loss(spec: &ModelSpec, theta: &[f64], clients: &[ClientDataset]) -> Result<f64> {
    let total: usize = clients.iter().map(|c| c.weight()).sum();
    let mut acc = 0.0;
    for c in clients {
        let (loss, _) = loss_and_param_grad(spec, theta, c.samples())?;
        acc += loss * c.weight() as f64 / total as f64;
    }
    Ok(acc)
}
