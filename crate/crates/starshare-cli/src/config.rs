//! Experiment configuration: one JSON document with a network and one block
//! per command. Unknown keys are rejected, defaults are filled in at parse
//! time, and canonicalization re-serializes the network in sorted order so
//! that parse -> serialize -> parse is the identity on the canonical form.

use serde::{Deserialize, Serialize};
use starshare::model::NetworkSpec;

use crate::commands::CliError;

/// Top-level configuration document.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// The star network, in the library's document form. Optional because
    /// `example-fig4` carries its own family of networks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<RateBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimize: Option<OptimizeBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stay_cost: Option<StayCostBlock>,
    #[serde(default)]
    pub output: OutputBlock,
}

/// Inputs for the `rate` command.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateBlock {
    /// Fluid state, one component per route in canonical route order.
    pub x: Vec<f64>,
    /// Drift, one component per route.
    pub d: Vec<f64>,
    #[serde(default)]
    pub mode: RateModeDoc,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateModeDoc {
    #[default]
    Ergodic,
    General,
}

/// Inputs for the `simulate` command.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateBlock {
    /// Simulated time span; must be finite and > 0.
    pub horizon: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub policy: PolicyDoc,
    /// Initial document counts per route; defaults to the empty network.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<u64>>,
    #[serde(default = "default_histogram_cap")]
    pub histogram_cap: usize,
    /// Time slices for the batch-means standard error of the decay fit.
    #[serde(default = "default_batches")]
    pub batches: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_interval: Option<f64>,
    /// Histogram window for the decay fit, as fractions of the largest
    /// occupancy seen; defaults to the library's standard window.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<(f64, f64)>,
}

fn default_histogram_cap() -> usize {
    10_000
}

fn default_batches() -> usize {
    8
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyDoc {
    #[default]
    Min,
    ProcessorSharing {
        anchor: u32,
    },
}

impl PolicyDoc {
    pub fn to_policy(self) -> starshare::model::Policy {
        match self {
            PolicyDoc::Min => starshare::model::Policy::Min,
            PolicyDoc::ProcessorSharing { anchor } => {
                starshare::model::Policy::ProcessorSharing { anchor }
            }
        }
    }
}

/// Inputs for the `optimize` command.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeBlock {
    /// Channel whose tail decay rate is optimized.
    pub target_channel: u32,
    #[serde(default = "default_segments")]
    pub segments: usize,
    #[serde(default = "default_multistarts")]
    pub multistarts: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_segments() -> usize {
    4
}

fn default_multistarts() -> usize {
    16
}

fn default_max_iters() -> usize {
    600
}

fn default_tolerance() -> f64 {
    1e-6
}

/// Inputs for the `example-fig4` sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    /// Name of the swept parameter; only the cross-route arrival intensity
    /// of the reference three-channel network is supported.
    #[serde(default = "default_parameter")]
    pub parameter: String,
    /// Sweep values; each must lie strictly inside (0, 0.5).
    #[serde(default = "default_sweep_values")]
    pub values: Vec<f64>,
    #[serde(default = "default_sweep_horizon")]
    pub horizon: f64,
    #[serde(default = "default_sweep_seed")]
    pub seed: u64,
    #[serde(default = "default_segments")]
    pub segments: usize,
    #[serde(default = "default_sweep_multistarts")]
    pub multistarts: usize,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

impl Default for SweepBlock {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all sweep fields have defaults")
    }
}

fn default_parameter() -> String {
    "lambda13".to_string()
}

fn default_sweep_values() -> Vec<f64> {
    vec![0.05, 0.15, 0.25, 0.35, 0.45]
}

fn default_sweep_horizon() -> f64 {
    1e6
}

fn default_sweep_seed() -> u64 {
    1
}

fn default_sweep_multistarts() -> usize {
    8
}

/// Inputs for the `stay-cost` command.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StayCostBlock {
    /// Routes held near the origin, as channel-id pairs.
    pub routes: Vec<(u32, u32)>,
}

/// Where output files go.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default = "default_directory")]
    pub directory: String,
}

impl Default for OutputBlock {
    fn default() -> Self {
        OutputBlock {
            directory: default_directory(),
        }
    }
}

fn default_directory() -> String {
    "out".to_string()
}

impl ExperimentConfig {
    /// Parses a configuration document and canonicalizes the embedded
    /// network (sorted channels and routes, validated parameters).
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let mut config: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| CliError::Validation(format!("config: {e}")))?;
        if let Some(doc) = &config.network {
            let spec = NetworkSpec::from_json(&doc.to_string())
                .map_err(|e| CliError::Validation(format!("config.network: {e}")))?;
            config.network = Some(
                serde_json::from_str(&spec.to_json()).expect("spec serialization is valid JSON"),
            );
        }
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("config serializes");
        text.push('\n');
        text
    }

    /// The network, required by every command except `example-fig4`.
    pub fn network(&self) -> Result<NetworkSpec, CliError> {
        let doc = self.network.as_ref().ok_or_else(|| {
            CliError::Validation("config.network: required for this command".to_string())
        })?;
        NetworkSpec::from_json(&doc.to_string())
            .map_err(|e| CliError::Validation(format!("config.network: {e}")))
    }

    /// Applies command-line overrides: `--out` replaces the output
    /// directory and `--seed` replaces every per-block seed.
    pub fn apply_overrides(&mut self, out: Option<&str>, seed: Option<u64>) {
        if let Some(dir) = out {
            self.output.directory = dir.to_string();
        }
        if let Some(seed) = seed {
            if let Some(block) = &mut self.simulate {
                block.seed = seed;
            }
            if let Some(block) = &mut self.optimize {
                block.seed = seed;
            }
            if let Some(block) = &mut self.sweep {
                block.seed = seed;
            }
        }
    }
}
