//! Stress-experiment grids: market factors crossed with crash factors.
//!
//! Calm statistics for impact detection come from separate no-stress runs
//! of each market cell and are stored next to the grid as `calm_stats.json`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use anyhow::Context;
use lobsim_agents::{StressConfig, StressTraders};
use lobsim_analytics::CalmStats;
use serde::{Deserialize, Serialize};

use crate::analyze::{analyze, calm_stats, RunRecord};
use crate::config::{LatencyConfig, SimConfig};
use crate::{rundir, sim};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Market {
    /// Equal wealth (α = N), r ~ U(0.2, 0.4).
    #[serde(rename = "H")]
    Homogeneous,
    /// Concentrated wealth (α = 1), r ~ U(0.2, 0.8).
    #[serde(rename = "NH")]
    NonHomogeneous,
}

impl fmt::Display for Market {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Market::Homogeneous => "H",
            Market::NonHomogeneous => "NH",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Stressed runs per factor combination.
    pub replicates: usize,
    /// No-stress runs per market cell used for the calm statistics.
    #[serde(default = "default_calm")]
    pub calm_replicates: usize,
    /// Run seeds are `seed`, `seed + 1`, ... in grid order.
    pub seed: u64,
    #[serde(default = "default_session")]
    pub session_seconds: f64,
    #[serde(default = "default_trigger")]
    pub trigger_seconds: f64,
    /// Mean time between an agent's trading attempts.
    pub frequency_minutes: Vec<f64>,
    pub markets: Vec<Market>,
    pub stress_sizes: Vec<f64>,
    pub stress_traders: Vec<StressTraders>,
    #[serde(default)]
    pub latency: LatencyConfig,
}

fn default_calm() -> usize {
    3
}

fn default_session() -> f64 {
    3_600.0
}

fn default_trigger() -> f64 {
    1_800.0
}

impl GridSpec {
    /// The full factor grid with `replicates` runs per cell.
    pub fn stress_experiment(replicates: usize, seed: u64) -> GridSpec {
        GridSpec {
            replicates,
            calm_replicates: default_calm(),
            seed,
            session_seconds: default_session(),
            trigger_seconds: default_trigger(),
            frequency_minutes: vec![1.0, 0.5],
            markets: vec![Market::Homogeneous, Market::NonHomogeneous],
            stress_sizes: vec![0.05, 0.10],
            stress_traders: vec![StressTraders::One, StressTraders::TwentySimultaneous, StressTraders::TwentyStaggered],
            latency: LatencyConfig::default(),
        }
    }

    pub fn load(path: &Path) -> anyhow::Result<GridSpec> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let spec: GridSpec = toml::from_str(&text).with_context(|| format!("in {}", path.display()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        anyhow::ensure!(self.replicates > 0, "replicates: must be at least 1");
        anyhow::ensure!(self.calm_replicates > 0, "calm_replicates: must be at least 1");
        for (name, empty) in [
            ("frequency_minutes", self.frequency_minutes.is_empty()),
            ("markets", self.markets.is_empty()),
            ("stress_sizes", self.stress_sizes.is_empty()),
            ("stress_traders", self.stress_traders.is_empty()),
        ] {
            anyhow::ensure!(!empty, "{name}: list at least one level");
        }
        for &f in &self.frequency_minutes {
            anyhow::ensure!(f > 0.0 && f.is_finite(), "frequency_minutes: levels must be positive, got {f}");
        }
        // Catches the remaining range errors with field names.
        for cell in self.cells() {
            self.config(&cell, self.seed)?.validate()?;
        }
        Ok(())
    }

    /// Every stressed combination, in the order runs are seeded.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &frequency_minutes in &self.frequency_minutes {
            for &market in &self.markets {
                for &stress_size in &self.stress_sizes {
                    for &stress_traders in &self.stress_traders {
                        cells.push(Cell {
                            frequency_minutes,
                            market,
                            stress: Some((stress_size, stress_traders)),
                        });
                    }
                }
            }
        }
        cells
    }

    /// Market cells without stress, for the calm statistics.
    pub fn calm_cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &frequency_minutes in &self.frequency_minutes {
            for &market in &self.markets {
                cells.push(Cell {
                    frequency_minutes,
                    market,
                    stress: None,
                });
            }
        }
        cells
    }

    pub fn config(&self, cell: &Cell, seed: u64) -> anyhow::Result<SimConfig> {
        let mut cfg = SimConfig::baseline(seed);
        cfg.latency = self.latency;
        let a = &mut cfg.agents;
        a.session_seconds = self.session_seconds;
        a.lambda = self.session_seconds / (60.0 * cell.frequency_minutes);
        match cell.market {
            Market::Homogeneous => {
                a.alpha = a.n as f64;
                a.r_high = 0.4;
            }
            Market::NonHomogeneous => {
                a.alpha = 1.0;
                a.r_high = 0.8;
            }
        }
        cfg.stress = cell.stress.map(|(size_fraction, traders)| StressConfig {
            size_fraction,
            traders,
            trigger_seconds: self.trigger_seconds,
            stagger_seconds: 3.0,
        });
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub frequency_minutes: f64,
    pub market: Market,
    pub stress: Option<(f64, StressTraders)>,
}

impl Cell {
    /// Key shared by a stressed cell and its calm counterpart.
    pub fn market_key(&self) -> String {
        format!("{}min-{}", self.frequency_minutes, self.market)
    }

    pub fn name(&self) -> String {
        match self.stress {
            None => format!("{}-calm", self.market_key()),
            Some((size, traders)) => format!("{}-{}pct-{}", self.market_key(), size * 100.0, traders_label(traders)),
        }
    }
}

pub fn traders_label(t: StressTraders) -> &'static str {
    match t {
        StressTraders::One => "1",
        StressTraders::TwentySimultaneous => "20S",
        StressTraders::TwentyStaggered => "20NS",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub run: String,
    pub seed: u64,
    pub frequency_minutes: f64,
    pub market: Market,
    pub stress_size: f64,
    pub stress_traders: String,
    pub drawdown_slope: Option<f64>,
    pub drawdown_relative: Option<f64>,
    pub impact_detected: bool,
    pub impact_duration_seconds: Option<f64>,
    pub impact_total_return: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GridResult {
    pub rows: Vec<SummaryRow>,
    /// Keyed by [`Cell::market_key`].
    pub calm: BTreeMap<String, CalmStats>,
}

/// Run the calm cells, then every stressed run. With `out`, each run gets a
/// directory under it and the summary lands in `summary.csv`.
pub fn run_grid(spec: &GridSpec, out: Option<&Path>) -> anyhow::Result<GridResult> {
    spec.validate()?;
    let mut seed = spec.seed;
    let mut result = GridResult::default();

    for cell in spec.calm_cells() {
        let mut records = Vec::new();
        for rep in 0..spec.calm_replicates {
            let cfg = spec.config(&cell, seed)?;
            seed += 1;
            let output = sim::run(&cfg)?;
            let rec = RunRecord::from_output(&cfg, &output);
            if let Some(dir) = out {
                let report = analyze(&rec, None);
                rundir::write_run(&dir.join("calm").join(cell.name()).join(format!("r{rep:02}")), &cfg, &output, &report)?;
            }
            tracing::info!(cell = %cell.name(), rep, wall = output.wall_seconds, "calm run done");
            records.push(rec);
        }
        result.calm.insert(cell.market_key(), calm_stats(&records)?);
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("calm_stats.json"), serde_json::to_string_pretty(&result.calm)?)?;
    }

    for cell in spec.cells() {
        let calm = &result.calm[&cell.market_key()];
        let (stress_size, traders) = cell.stress.expect("stressed cell");
        for rep in 0..spec.replicates {
            let cfg = spec.config(&cell, seed)?;
            seed += 1;
            let output = sim::run(&cfg)?;
            let rec = RunRecord::from_output(&cfg, &output);
            let report = analyze(&rec, Some(calm));
            let run = format!("{}/r{rep:02}", cell.name());
            if let Some(dir) = out {
                rundir::write_run(&dir.join("runs").join(&run), &cfg, &output, &report)?;
            }
            let stress = report.stress.as_ref();
            let window = stress.and_then(|s| s.impact).filter(|w| w.detected);
            result.rows.push(SummaryRow {
                run,
                seed: cfg.agents.seed,
                frequency_minutes: cell.frequency_minutes,
                market: cell.market,
                stress_size,
                stress_traders: traders_label(traders).to_string(),
                drawdown_slope: stress.and_then(|s| s.drawdown_slope),
                drawdown_relative: stress.and_then(|s| s.drawdown_relative),
                impact_detected: window.is_some(),
                impact_duration_seconds: stress.and_then(|s| s.impact_duration_seconds),
                impact_total_return: window.map(|w| w.total_return),
                wall_seconds: output.wall_seconds,
            });
            tracing::info!(cell = %cell.name(), rep, wall = output.wall_seconds, "stress run done");
        }
    }
    if let Some(dir) = out {
        write_summary(&dir.join("summary.csv"), &result.rows)?;
    }
    Ok(result)
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_calm_stats(path: &Path) -> anyhow::Result<BTreeMap<String, CalmStats>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

/// Mean of the present values; `None` when there are none.
pub fn mean_of(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.into_iter().flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Fraction of rows with a detected impact.
pub fn detection_rate<'a>(rows: impl IntoIterator<Item = &'a SummaryRow>) -> f64 {
    let (mut n, mut hit) = (0usize, 0usize);
    for r in rows {
        n += 1;
        hit += usize::from(r.impact_detected);
    }
    if n == 0 {
        0.0
    } else {
        hit as f64 / n as f64
    }
}
