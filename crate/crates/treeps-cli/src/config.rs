//! Layered run configuration.
//!
//! Values resolve in order: built-in defaults, then an optional TOML file,
//! then command-line flags, then the `TREEPS_SEED` environment variable,
//! which overrides every seed at once. The `[rollout]` section is
//! authoritative for tree construction everywhere, including training.

use crate::CliError;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;
use treeps::engine::RolloutConfig;
use treeps::seeding;
use treeps::sim_env::EnvConfig;
use treeps::trainer::TrainConfig;

pub const SEED_ENV_VAR: &str = "TREEPS_SEED";

/// Which policy drives rollouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Fresh tabular policy with uniform action probabilities.
    #[default]
    Uniform,
    /// Scripted policy with a known good/bad opening asymmetry.
    Planted,
    /// HTTP text-completion endpoint.
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySection {
    pub kind: PolicyKind,
    /// Planted policy: chance of a correct answer after the useful opening.
    pub p_good: f64,
    /// Planted policy: chance of a correct answer after the noise opening.
    pub p_bad: f64,
    /// Remote policy endpoint URL.
    pub url: Option<String>,
}

impl Default for PolicySection {
    fn default() -> Self {
        PolicySection {
            kind: PolicyKind::Uniform,
            p_good: 0.9,
            p_bad: 0.1,
            url: None,
        }
    }
}

/// Raw TOML shape; every section is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    env: Option<EnvConfig>,
    rollout: Option<RolloutConfig>,
    train: Option<TrainConfig>,
    policy: Option<PolicySection>,
}

/// Fully resolved configuration for one command invocation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub rollout: RolloutConfig,
    pub train: TrainConfig,
    pub policy: PolicySection,
}

/// Defaults merged with an optional TOML file.
pub fn load(config_path: Option<&Path>) -> Result<RunConfig, CliError> {
    let mut merged = RunConfig::default();
    if let Some(path) = config_path {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let file: FileConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let Some(env) = file.env {
            merged.env = env;
        }
        if let Some(rollout) = file.rollout {
            merged.rollout = rollout;
        }
        if let Some(train) = file.train {
            merged.train = train;
        }
        if let Some(policy) = file.policy {
            merged.policy = policy;
        }
    }
    merged.train.rollout = merged.rollout.clone();
    Ok(merged)
}

/// Applies `TREEPS_SEED` to every seed; the strongest override.
pub fn apply_seed_env(config: &mut RunConfig) -> Result<(), CliError> {
    if let Ok(raw) = std::env::var(SEED_ENV_VAR) {
        let seed: u64 = raw.trim().parse().map_err(|_| {
            CliError::Config(format!("{SEED_ENV_VAR} must be an unsigned integer, got {raw:?}"))
        })?;
        config.env.seed = seed;
        config.rollout.seed = seed;
        config.train.rollout.seed = seed;
    }
    Ok(())
}

/// Content digest of any serializable configuration, for manifests and
/// stored artifacts.
pub fn digest_of(value: &impl Serialize) -> String {
    let bytes = serde_json::to_vec(value).expect("configurations serialize");
    seeding::fingerprint_hex(&bytes)
}
