use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use lobsim_agents::{AgentConfig, StressConfig};
use lobsim_core::types::{Cash, Symbol};
use serde::{Deserialize, Serialize};

/// Message delays inside the accelerated simulator, in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatencyConfig {
    /// Client to exchange.
    pub order_us: u64,
    /// Exchange to the owning client (acks, reports, portfolio updates).
    pub report_us: u64,
    /// Exchange to every client for public prices.
    pub market_data_us: u64,
    /// Mean of an exponential extra delay on client messages; 0 disables it.
    pub jitter_us: u64,
}

impl Default for LatencyConfig {
    fn default() -> Self {
        LatencyConfig {
            order_us: 500,
            report_us: 500,
            market_data_us: 500,
            jitter_us: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExchangeSection {
    pub symbol: Symbol,
    /// Per-share fee in dollars.
    #[serde(default)]
    pub fee_per_share: f64,
    #[serde(default = "default_depth_levels")]
    pub depth_levels: usize,
}

fn default_depth_levels() -> usize {
    50
}

impl ExchangeSection {
    pub fn fee(&self) -> Cash {
        Cash::from_dollars(self.fee_per_share)
    }
}

impl Default for ExchangeSection {
    fn default() -> Self {
        ExchangeSection {
            symbol: Symbol::from("CS1"),
            fee_per_share: 0.0,
            depth_levels: default_depth_levels(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default)]
    pub exchange: ExchangeSection,
    pub agents: AgentConfig,
    #[serde(default)]
    pub latency: LatencyConfig,
    #[serde(default)]
    pub stress: Option<StressConfig>,
    /// Grid spacing of the recorded best-price and depth samples.
    #[serde(default = "default_sample_us")]
    pub sample_interval_us: u64,
    /// Spacing of recorded depth snapshots; a multiple of the sample interval.
    #[serde(default = "default_depth_us")]
    pub depth_interval_us: u64,
    #[serde(default)]
    pub replay: Option<ReplaySection>,
    /// Pace the run against the wall clock at this many simulated seconds
    /// per real second. Absent: run as fast as possible. Pacing never
    /// changes the results, only how long they take.
    #[serde(default)]
    pub time_scale: Option<f64>,
}

/// Recorded quotes that act as the global book during the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplaySection {
    /// Relative paths resolve against the config file's directory.
    pub file: PathBuf,
}

fn default_sample_us() -> u64 {
    1_000_000
}

fn default_depth_us() -> u64 {
    10_000_000
}

impl SimConfig {
    pub fn baseline(seed: u64) -> SimConfig {
        SimConfig {
            exchange: ExchangeSection::default(),
            agents: AgentConfig::baseline(seed),
            latency: LatencyConfig::default(),
            stress: None,
            sample_interval_us: default_sample_us(),
            depth_interval_us: default_depth_us(),
            replay: None,
            time_scale: None,
        }
    }

    pub fn from_toml(text: &str) -> anyhow::Result<SimConfig> {
        let cfg: SimConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<SimConfig> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = SimConfig::from_toml(&text).with_context(|| format!("in {}", path.display()))?;
        if let Some(r) = &mut cfg.replay {
            if r.file.is_relative() {
                if let Some(dir) = path.parent() {
                    r.file = dir.join(&r.file);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.agents.validate()?;
        if self.exchange.symbol.as_str().is_empty() {
            bail!("exchange.symbol: must not be empty");
        }
        if !(self.exchange.fee_per_share >= 0.0 && self.exchange.fee_per_share.is_finite()) {
            bail!("exchange.fee_per_share: must be a non-negative number, got {}", self.exchange.fee_per_share);
        }
        if self.exchange.depth_levels == 0 {
            bail!("exchange.depth_levels: must be at least 1");
        }
        if self.sample_interval_us == 0 {
            bail!("sample_interval_us: must be positive");
        }
        if self.depth_interval_us == 0 || self.depth_interval_us % self.sample_interval_us != 0 {
            bail!(
                "depth_interval_us: must be a positive multiple of sample_interval_us ({}), got {}",
                self.sample_interval_us,
                self.depth_interval_us
            );
        }
        if let Some(scale) = self.time_scale {
            if !(scale >= 1.0 && scale.is_finite()) {
                bail!("time_scale: must be at least 1, got {scale}");
            }
        }
        if let Some(s) = &self.stress {
            if !(s.size_fraction > 0.0 && s.size_fraction <= 1.0) {
                bail!("stress.size_fraction: need 0 < size_fraction <= 1, got {}", s.size_fraction);
            }
            if !(s.trigger_seconds >= 0.0 && s.trigger_seconds.is_finite()) {
                bail!("stress.trigger_seconds: must be a non-negative number, got {}", s.trigger_seconds);
            }
            if !(s.stagger_seconds >= 0.0 && s.stagger_seconds.is_finite()) {
                bail!("stress.stagger_seconds: must be a non-negative number, got {}", s.stagger_seconds);
            }
        }
        Ok(())
    }
}
