//! Declarative experiment configuration (TOML, see docs/config.md).

use serde::{Deserialize, Serialize};
use std::path::Path;

use async_gibbs::engine::{DropPolicy, LatencyDist, NetworkConfig, Schedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub topology: TopologySection,
    #[serde(default)]
    pub network: NetworkSection,
    pub run: RunSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// One of: "jacobi", "expcov", "gp", "mixed".
    pub family: String,
    /// Gaussian families: dimension of the target.
    pub dim: Option<usize>,
    /// Exponential kernel decay (expcov, gp).
    pub phi: Option<f64>,
    /// Gaussian families: coordinates per block. GP: θ slice length.
    pub block_size: Option<usize>,
    /// GP/mixed: observation count.
    pub n: Option<usize>,
    /// GP grid spacing.
    pub rho: Option<f64>,
    /// GP observation noise for the generator.
    pub noise_sd: Option<f64>,
    /// GP banded-product radius; omitted = computed at build.
    pub band_width: Option<usize>,
    /// Mixed: random-effect dimension, periods, lags, hyperparameters.
    pub d: Option<usize>,
    pub t_len: Option<usize>,
    pub p_lags: Option<usize>,
    pub kappa_mu: Option<f64>,
    pub kappa_gamma: Option<f64>,
    pub epsilon: Option<f64>,
    /// Seed for synthetic data (independent of the run seed).
    pub data_seed: Option<u64>,
    /// Load data from a file instead of generating it
    /// (two-column CSV for gp, JSON lines for mixed).
    pub data_file: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    pub workers: usize,
    /// Transmitted coordinates are split into contiguous runs, one per
    /// worker; "contiguous" is the only supported policy.
    #[serde(default = "default_ownership")]
    pub ownership: String,
    /// Permit a coordinate to be owned by several workers.
    #[serde(default)]
    pub allow_shared_ownership: bool,
}

fn default_ownership() -> String {
    "contiguous".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub transmit_prob: f64,
    /// "per_link" (independent per receiver) or "per_broadcast"
    /// (all-or-none per broadcast).
    #[serde(default = "default_drop_policy")]
    pub drop_policy: String,
    pub latency: LatencySection,
    pub fifo_per_link: bool,
    pub min_latency: f64,
}

fn default_drop_policy() -> String {
    "per_link".to_string()
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            transmit_prob: 1.0,
            drop_policy: default_drop_policy(),
            latency: LatencySection {
                kind: "constant".into(),
                value: Some(0.0),
                lo: None,
                hi: None,
                p: None,
            },
            fifo_per_link: true,
            min_latency: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencySection {
    /// "constant" | "uniform" | "geometric".
    pub kind: String,
    pub value: Option<f64>,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// "simulated" | "threaded" | "jacobi".
    #[serde(default = "default_transport")]
    pub transport: String,
    /// "exact" | "approximate".
    pub mode: String,
    /// Steps per worker (sweeps for the jacobi transport).
    pub steps: u64,
    pub seed: u64,
    /// Defaults to steps / 10.
    pub burn_in: Option<u64>,
    #[serde(default = "default_thin")]
    pub thin: u64,
    #[serde(default)]
    pub diag_sample_prob: f64,
    /// Worker step rate of the simulated exponential schedule.
    #[serde(default = "default_rate")]
    pub rate: f64,
    /// "exponential" (default) or "round_robin".
    #[serde(default = "default_schedule")]
    pub schedule: String,
    #[serde(default = "default_divergence_bound")]
    pub divergence_bound: f64,
    /// Threaded transport time budget.
    #[serde(default = "default_wall_clock")]
    pub wall_clock_limit_secs: u64,
    /// Flat state dimensions to trace; omitted = a small per-family default.
    pub trace_dims: Option<Vec<usize>>,
}

fn default_transport() -> String {
    "simulated".to_string()
}
fn default_thin() -> u64 {
    1
}
fn default_rate() -> f64 {
    1.0
}
fn default_schedule() -> String {
    "exponential".to_string()
}
fn default_divergence_bound() -> f64 {
    1e6
}
fn default_wall_clock() -> u64 {
    3600
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
}

fn default_formats() -> Vec<String> {
    vec!["json".into(), "csv".into()]
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display()))?;
        let config: ExperimentConfig = toml::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    /// Field-level semantic checks beyond what deserialization enforces.
    pub fn validate(&self) -> anyhow::Result<()> {
        match self.model.family.as_str() {
            "jacobi" | "expcov" | "gp" | "mixed" => {}
            other => anyhow::bail!("model.family: unknown family {other:?}"),
        }
        if self.topology.workers == 0 {
            anyhow::bail!("topology.workers: must be at least 1");
        }
        if self.topology.ownership != "contiguous" {
            anyhow::bail!("topology.ownership: only \"contiguous\" is supported");
        }
        if !(self.network.transmit_prob > 0.0 && self.network.transmit_prob <= 1.0) {
            anyhow::bail!("network.transmit_prob: must lie in (0, 1]");
        }
        match self.network.drop_policy.as_str() {
            "per_link" | "per_broadcast" => {}
            other => anyhow::bail!("network.drop_policy: unknown policy {other:?}"),
        }
        self.latency_dist()?;
        match self.run.mode.as_str() {
            "exact" | "approximate" => {}
            other => anyhow::bail!("run.mode: unknown mode {other:?}"),
        }
        match self.run.transport.as_str() {
            "simulated" | "threaded" | "jacobi" => {}
            other => anyhow::bail!("run.transport: unknown transport {other:?}"),
        }
        match self.run.schedule.as_str() {
            "exponential" | "round_robin" => {}
            other => anyhow::bail!("run.schedule: unknown schedule {other:?}"),
        }
        if self.run.steps == 0 {
            anyhow::bail!("run.steps: must be positive");
        }
        if !(0.0..=1.0).contains(&self.run.diag_sample_prob) {
            anyhow::bail!("run.diag_sample_prob: must lie in [0, 1]");
        }
        if self.run.rate <= 0.0 {
            anyhow::bail!("run.rate: must be positive");
        }
        if self.output.dir.is_empty() {
            anyhow::bail!("output.dir: must not be empty");
        }
        for f in &self.output.formats {
            if f != "json" && f != "csv" {
                anyhow::bail!("output.formats: unknown format {f:?}");
            }
        }
        Ok(())
    }

    pub fn latency_dist(&self) -> anyhow::Result<LatencyDist> {
        let l = &self.network.latency;
        match l.kind.as_str() {
            "constant" => {
                let v = l
                    .value
                    .ok_or_else(|| anyhow::anyhow!("network.latency.value: required for kind \"constant\""))?;
                Ok(LatencyDist::Constant(v))
            }
            "uniform" => {
                let lo = l
                    .lo
                    .ok_or_else(|| anyhow::anyhow!("network.latency.lo: required for kind \"uniform\""))?;
                let hi = l
                    .hi
                    .ok_or_else(|| anyhow::anyhow!("network.latency.hi: required for kind \"uniform\""))?;
                Ok(LatencyDist::Uniform { lo, hi })
            }
            "geometric" => {
                let p = l
                    .p
                    .ok_or_else(|| anyhow::anyhow!("network.latency.p: required for kind \"geometric\""))?;
                Ok(LatencyDist::Geometric { p })
            }
            other => anyhow::bail!("network.latency.kind: unknown kind {other:?}"),
        }
    }

    pub fn network_config(&self) -> anyhow::Result<NetworkConfig> {
        Ok(NetworkConfig {
            transmit_prob: self.network.transmit_prob,
            drop_policy: match self.network.drop_policy.as_str() {
                "per_broadcast" => DropPolicy::PerBroadcast,
                _ => DropPolicy::PerLink,
            },
            latency: self.latency_dist()?,
            fifo_per_link: self.network.fifo_per_link,
            min_latency: self.network.min_latency,
        })
    }

    pub fn schedule(&self) -> Schedule {
        match self.run.schedule.as_str() {
            "round_robin" => Schedule::RoundRobin {
                dt: 1.0 / self.run.rate,
            },
            _ => Schedule::ExponentialRate(self.run.rate),
        }
    }
}
