//! TOML configuration: a scenario block mirroring the core type, plus
//! optional experiment and ruin-game blocks. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::Deserialize;

use collapse_core::ruin::{DistKind, StepDistribution};
use collapse_core::scenario::Scenario;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub scenario: Scenario,
    #[serde(default)]
    pub experiment: ExperimentBlock,
    pub ruin: Option<RuinBlock>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentBlock {
    #[serde(default = "default_trials")]
    pub trials: u64,
    #[serde(default)]
    pub master_seed: u64,
    pub out_dir: Option<PathBuf>,
    /// Record every n-th step of each trial trajectory; 0 disables.
    #[serde(default)]
    pub thin: usize,
}

impl Default for ExperimentBlock {
    fn default() -> Self {
        Self {
            trials: default_trials(),
            master_seed: 0,
            out_dir: None,
            thin: 0,
        }
    }
}

fn default_trials() -> u64 {
    1000
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuinBlock {
    pub kind: DistKind,
    pub delta0: f64,
    /// Probability that the lower-indexed player of a pair gains; 0.5 is
    /// the fair game.
    #[serde(default = "default_sign_bias")]
    pub sign_bias: f64,
    /// Starting stakes; defaults to |c_k|² of the scenario amplitudes.
    pub w0: Option<Vec<f64>>,
    /// Trial count override for the ruin game.
    pub trials: Option<u64>,
}

fn default_sign_bias() -> f64 {
    0.5
}

impl RuinBlock {
    pub fn distribution(&self) -> anyhow::Result<StepDistribution> {
        StepDistribution::new(self.kind, self.delta0)
            .map_err(|e| anyhow::anyhow!("invalid ruin distribution: {e}"))
    }
}

pub fn load(path: &Path) -> anyhow::Result<Config> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    let config: Config = toml::from_str(&text)
        .with_context(|| format!("invalid config {}", path.display()))?;
    let warnings = config
        .scenario
        .validate()
        .map_err(|e| anyhow::anyhow!("invalid config {}: {e}", path.display()))?;
    for warning in warnings {
        eprintln!("warning: {warning}");
    }
    if let Some(ruin) = &config.ruin {
        ruin.distribution()?;
        if !(ruin.sign_bias > 0.0 && ruin.sign_bias < 1.0) {
            bail!("ruin.sign_bias must lie in (0, 1), got {}", ruin.sign_bias);
        }
        if let Some(w0) = &ruin.w0 {
            if w0.len() < 2 || w0.iter().any(|&w| !(w >= 0.0)) {
                bail!("ruin.w0 must hold at least two non-negative stakes");
            }
            let total: f64 = w0.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                bail!("ruin.w0 must sum to 1, got {total}");
            }
        }
    }
    Ok(config)
}
