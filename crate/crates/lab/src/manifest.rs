use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::pipeline::root_stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedPlan {
    pub seed: u64,
    /// Stream id of each replicate, in replicate order.
    pub replicate_streams: Vec<u64>,
}

impl SeedPlan {
    pub fn for_config(cfg: &ExperimentConfig) -> Self {
        let root = root_stream(cfg.seed);
        Self {
            seed: cfg.seed,
            replicate_streams: (0..cfg.replicates).map(|r| root.fork(r as u64).stream_id()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_sha256: String,
    pub tool_version: String,
    pub workers: usize,
    pub seed_plan: SeedPlan,
    pub started_at: String,
    pub finished_at: String,
    pub outputs: Vec<String>,
}

/// SHA-256 of the canonical (re-serialized) configuration.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    hex::encode(Sha256::digest(cfg.to_toml().as_bytes()))
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}
