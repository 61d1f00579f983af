//! Experiment configuration (TOML). Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use privlab_core::attack::AttackConfig;
use privlab_core::bounds::SweepGrid;
use privlab_core::complexity::ComplexityVariant;
use privlab_core::mbp::MbpConfig;
use privlab_core::models::ModelSpec;
use privlab_core::protection::{MechanismConfig, MechanismKind};

use crate::error::LabError;

/// Built-in configuration used when `--config` is not given.
pub const DEFAULT_CONFIG: &str = include_str!("../configs/default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub replicates: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub model: ModelSpec,
    pub clients: ClientsConfig,
    #[serde(default)]
    pub session: SessionConfig,
    pub mechanism: MechanismConfig,
    pub attack: AttackConfig,
    #[serde(default)]
    pub complexity: ComplexityConfig,
    #[serde(default)]
    pub mbp: Option<MbpConfig>,
    #[serde(default)]
    pub bounds: BoundsConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub validate: ValidateConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    /// Features uniform on `[0, 1]^d`, labels uniform.
    UniformBox,
    /// One clipped Gaussian blob per class.
    TwoGaussians,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientsConfig {
    pub count: usize,
    pub samples_per_client: usize,
    pub generator: Generator,
    /// Client whose final-round upload is attacked.
    #[serde(default)]
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    #[serde(default = "one")]
    pub rounds: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    /// Standard deviation of the initial parameters.
    #[serde(default = "unit")]
    pub theta_scale: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            rounds: 1,
            lr: default_lr(),
            theta_scale: 1.0,
        }
    }
}

fn one() -> usize {
    1
}
fn unit() -> f64 {
    1.0
}
fn default_lr() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexityConfig {
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_variant")]
    pub variant: ComplexityVariant,
    #[serde(default = "yes")]
    pub clamp: bool,
    /// Monte-Carlo draws per replicate for the protection complexity.
    #[serde(default = "default_trials")]
    pub protection_trials: usize,
    #[serde(default = "default_trials")]
    pub bilipschitz_pairs: usize,
}

impl Default for ComplexityConfig {
    fn default() -> Self {
        Self {
            gamma: default_gamma(),
            variant: default_variant(),
            clamp: true,
            protection_trials: default_trials(),
            bilipschitz_pairs: default_trials(),
        }
    }
}

fn default_gamma() -> f64 {
    0.1
}
fn default_variant() -> ComplexityVariant {
    ComplexityVariant::RunningMean
}
fn default_trials() -> usize {
    1000
}
fn yes() -> bool {
    true
}

/// Bound inputs. Anything left out is taken from `estimates`, the
/// `complexity.json` written by the `attack` command.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    pub estimates: Option<PathBuf>,
    pub m: Option<usize>,
    pub epsilon: Option<f64>,
    pub epsilon_hat: Option<f64>,
    pub zeta: Option<f64>,
    pub tau: Option<f64>,
    pub epsilon_p: Option<f64>,
    pub dataset_size: Option<usize>,
    pub gamma: Option<f64>,
    pub c_a: Option<f64>,
    pub c_b: Option<f64>,
    pub c2: Option<f64>,
    pub c_const: Option<f64>,
    pub p: Option<f64>,
    pub delta_k: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub epsilons: Vec<f64>,
    pub dims: Vec<usize>,
    pub mechanisms: Vec<MechanismKind>,
    pub t_budget: f64,
}

impl SweepConfig {
    pub fn grid(&self) -> SweepGrid {
        SweepGrid {
            epsilons: self.epsilons.clone(),
            dims: self.dims.clone(),
            mechanisms: self.mechanisms.clone(),
        }
    }
}

/// Tolerances and selection for the `validate` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateConfig {
    #[serde(default = "default_validate_seed")]
    pub seed: u64,
    /// Relative tolerance of the Monte-Carlo protection complexity.
    #[serde(default = "default_mc_tol")]
    pub mc_rel_tol: f64,
    /// Half-width of the accepted slope windows around -2 and -1.
    #[serde(default = "default_slope_tol")]
    pub slope_tol: f64,
    /// Maximum ratio of estimate spreads at 4x the simulation count.
    #[serde(default = "default_spread_ratio")]
    pub spread_ratio: f64,
    #[serde(default = "default_grad_tol")]
    pub grad_rel_tol: f64,
    #[serde(default = "default_bound_tol")]
    pub bound_abs_tol: f64,
    /// Check names to run; all when empty.
    #[serde(default)]
    pub only: Vec<String>,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        Self {
            seed: default_validate_seed(),
            mc_rel_tol: default_mc_tol(),
            slope_tol: default_slope_tol(),
            spread_ratio: default_spread_ratio(),
            grad_rel_tol: default_grad_tol(),
            bound_abs_tol: default_bound_tol(),
            only: Vec::new(),
        }
    }
}

fn default_validate_seed() -> u64 {
    20240607
}
fn default_mc_tol() -> f64 {
    0.05
}
fn default_slope_tol() -> f64 {
    0.4
}
fn default_spread_ratio() -> f64 {
    0.75
}
fn default_grad_tol() -> f64 {
    1e-5
}
fn default_bound_tol() -> f64 {
    1e-12
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, LabError> {
        let cfg: Self = toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, LabError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            LabError::Config(msg) => LabError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn default_config() -> Self {
        Self::parse(DEFAULT_CONFIG).expect("built-in configuration is valid")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<(), LabError> {
        let field = |name: &str, r: privlab_core::Result<()>| {
            r.map_err(|e| LabError::Config(format!("[{name}] {e}")))
        };
        if self.replicates == 0 {
            return Err(LabError::Config("replicates must be >= 1".into()));
        }
        field("model", self.model.validate())?;
        field("mechanism", self.mechanism.validate())?;
        field("attack", self.attack.validate())?;
        if let Some(mbp) = &self.mbp {
            field("mbp", mbp.validate())?;
        }
        let c = &self.clients;
        if c.count == 0 || c.samples_per_client == 0 {
            return Err(LabError::Config("[clients] count and samples_per_client must be >= 1".into()));
        }
        if c.target >= c.count {
            return Err(LabError::Config(format!(
                "[clients] target = {} but only {} clients",
                c.target, c.count
            )));
        }
        let s = &self.session;
        if s.rounds == 0 || !(s.lr > 0.0 && s.lr.is_finite()) || !(s.theta_scale >= 0.0) {
            return Err(LabError::Config(
                "[session] rounds >= 1, lr > 0 and theta_scale >= 0 required".into(),
            ));
        }
        let k = &self.complexity;
        if !(k.gamma > 0.0 && k.gamma < 1.0) {
            return Err(LabError::Config("[complexity] gamma must lie in (0, 1)".into()));
        }
        if k.protection_trials == 0 || k.bilipschitz_pairs < 2 {
            return Err(LabError::Config(
                "[complexity] protection_trials >= 1 and bilipschitz_pairs >= 2 required".into(),
            ));
        }
        if let Some(sw) = &self.sweep {
            if sw.epsilons.is_empty() || sw.dims.is_empty() || sw.mechanisms.is_empty() {
                return Err(LabError::Config("[sweep] grid axes must be non-empty".into()));
            }
            if !(sw.t_budget > 0.0) {
                return Err(LabError::Config("[sweep] t_budget must be > 0".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_parses_and_round_trips() {
        let cfg = ExperimentConfig::default_config();
        let again = ExperimentConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let text = DEFAULT_CONFIG.replace("[attack]", "[attack]\nstep_sise = 1.0");
        let err = ExperimentConfig::parse(&text).unwrap_err().to_string();
        assert!(err.contains("step_sise"), "{err}");
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn semantic_errors_name_the_section() {
        let text = DEFAULT_CONFIG.replace("replicates = ", "replicates = 0 #");
        assert!(ExperimentConfig::parse(&text).is_err());
        let mut cfg = ExperimentConfig::default_config();
        cfg.clients.target = cfg.clients.count;
        assert!(cfg.validate().unwrap_err().to_string().contains("[clients]"));
        let mut cfg = ExperimentConfig::default_config();
        cfg.attack.tau = 0.0;
        assert!(cfg.validate().unwrap_err().to_string().contains("[attack]"));
    }
}
