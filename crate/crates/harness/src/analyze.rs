//! Per-run analytics report, computed from a run record alone.

use lobsim_analytics::{
    acf, arch_lm_test, detect_immediate_impact, drawdown_slope, excess_kurtosis, lob_shape, resample_between,
    spread_stats, tail_exponent, ArchTest, CalmStats, ImpactParams, ImpactWindow, PriceSeries, ReturnSeries,
};
use lobsim_core::order_book::DepthSnapshot;
use lobsim_core::types::{Price, Timestamp, MICROS_PER_SECOND};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::config::SimConfig;
use crate::sim::{RunOutput, Sample};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Sampling intervals reported for every run.
pub const RETURN_INTERVALS_US: [Timestamp; 3] = [500_000, 1_000_000, 2_000_000];
pub const MAX_LAG: usize = 20;
pub const ARCH_LAGS: usize = 9;
pub const LOB_MAX_DISTANCE: usize = 30;
const SPREAD_LAGS: usize = 5;

/// The series the analytics need. Built from an in-memory run or loaded
/// from a run directory.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub config: SimConfig,
    pub prices: Vec<(Timestamp, Price)>,
    pub samples: Vec<Sample>,
    pub depth: Vec<(Timestamp, DepthSnapshot)>,
    pub trigger_us: Option<Timestamp>,
}

impl RunRecord {
    pub fn from_output(config: &SimConfig, out: &RunOutput) -> RunRecord {
        RunRecord {
            config: config.clone(),
            prices: out.last_prices.clone(),
            samples: out.samples.clone(),
            depth: out.depth.clone(),
            trigger_us: out.trigger_us,
        }
    }

    pub fn session_end(&self) -> Timestamp {
        (self.config.agents.session_seconds * MICROS_PER_SECOND as f64) as Timestamp
    }

    /// Trade prices as a step function that starts at the reference price.
    /// Several prints in the same microsecond collapse to the last one.
    pub fn price_series(&self) -> lobsim_analytics::Result<PriceSeries> {
        let mut pts: Vec<(Timestamp, Price)> = vec![(0, self.config.agents.p0)];
        for &(t, p) in &self.prices {
            match pts.last_mut() {
                Some(last) if last.0 == t => last.1 = p,
                _ => pts.push((t, p)),
            }
        }
        PriceSeries::from_ticks(&pts)
    }

    pub fn returns(&self, dt: Timestamp) -> lobsim_analytics::Result<ReturnSeries> {
        resample_between(&self.price_series()?, 0, self.session_end(), dt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnStats {
    pub dt_seconds: f64,
    pub samples: usize,
    pub mean: f64,
    pub std: f64,
    pub excess_kurtosis: Option<f64>,
    /// Lags 0 through 20.
    pub acf: Vec<f64>,
    pub squared_acf: Vec<f64>,
    pub arch: Option<ArchTest>,
    pub tail_exponent: Option<f64>,
}

impl ReturnStats {
    pub fn compute(r: &ReturnSeries) -> ReturnStats {
        let v = &r.values;
        let n = v.len();
        let mean = if n > 0 { v.iter().sum::<f64>() / n as f64 } else { 0.0 };
        let var = if n > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        let abs: Vec<f64> = v.iter().map(|x| x.abs()).collect();
        ReturnStats {
            dt_seconds: r.dt_seconds(),
            samples: n,
            mean,
            std: var.sqrt(),
            excess_kurtosis: excess_kurtosis(v).ok(),
            acf: acf(v, MAX_LAG).unwrap_or_default(),
            squared_acf: acf(&r.squared(), MAX_LAG).unwrap_or_default(),
            arch: arch_lm_test(v, ARCH_LAGS).ok(),
            tail_exponent: tail_exponent(&abs).ok(),
        }
    }

    /// Squared-return ACF is positive at every lag 1..=20.
    pub fn squared_acf_all_positive(&self) -> bool {
        self.squared_acf.len() > MAX_LAG && self.squared_acf[1..=MAX_LAG].iter().all(|&x| x > 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LobReport {
    /// Mean resting size by distance from the mid, in ticks.
    pub mean_size: Vec<f64>,
    pub snapshots_used: usize,
    pub peak_distance: Option<usize>,
    pub decays_beyond_peak: bool,
}

/// The profile decays when everything from five ticks past the peak onward
/// stays below the peak and the far end has fallen under half of it.
fn decays_beyond(mean_size: &[f64], peak: usize) -> bool {
    let top = mean_size[peak];
    let tail_start = peak + 5;
    if tail_start >= mean_size.len() {
        return false;
    }
    let far = *mean_size.last().expect("non-empty");
    mean_size[tail_start..].iter().all(|&v| v < top) && far < 0.5 * top
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpreadReport {
    pub mean_ticks: f64,
    /// Lags 0 through 5.
    pub acf: Vec<f64>,
    pub histogram: BTreeMap<u64, usize>,
    pub tail_exponent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressReport {
    pub trigger_us: Timestamp,
    /// Dollars per second, measured on the 1-second price grid.
    pub drawdown_slope: Option<f64>,
    /// The same slope divided by the price at the trigger, per second.
    pub drawdown_relative: Option<f64>,
    pub calm: Option<CalmStats>,
    pub impact: Option<ImpactWindow>,
    pub impact_duration_seconds: Option<f64>,
}

impl StressReport {
    pub fn impact_detected(&self) -> bool {
        self.impact.is_some_and(|w| w.detected)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub seed: u64,
    pub trades: usize,
    pub final_price_ticks: Option<u64>,
    pub returns: Vec<ReturnStats>,
    pub lob: Option<LobReport>,
    pub spread: Option<SpreadReport>,
    pub stress: Option<StressReport>,
    /// Analyses that could not be computed, with the reason.
    pub notes: Vec<String>,
}

impl Report {
    pub fn returns_at(&self, dt_seconds: f64) -> Option<&ReturnStats> {
        self.returns.iter().find(|r| (r.dt_seconds - dt_seconds).abs() < 1e-9)
    }
}

/// Analyze one run. `calm` supplies the matched no-stress return statistics
/// needed for impact detection; without it only the drawdown is reported.
pub fn analyze(rec: &RunRecord, calm: Option<&CalmStats>) -> Report {
    let mut notes = Vec::new();
    let mut returns = Vec::new();
    for dt in RETURN_INTERVALS_US {
        match rec.returns(dt) {
            Ok(r) => returns.push(ReturnStats::compute(&r)),
            Err(e) => notes.push(format!("returns at {} s: {e}", dt as f64 / 1e6)),
        }
    }

    let snapshots: Vec<DepthSnapshot> = rec.depth.iter().map(|(_, d)| d.clone()).collect();
    let shape = lob_shape(&snapshots, LOB_MAX_DISTANCE);
    let lob = (shape.snapshots_used > 0).then(|| {
        let peak = shape.peak_distance();
        LobReport {
            decays_beyond_peak: peak.is_some_and(|p| decays_beyond(&shape.mean_size, p)),
            peak_distance: peak,
            mean_size: shape.mean_size,
            snapshots_used: shape.snapshots_used,
        }
    });

    let quotes: Vec<_> = rec.samples.iter().map(|s| (s.best_bid, s.best_ask)).collect();
    let spread = match spread_stats(&quotes, SPREAD_LAGS) {
        Ok(s) => Some(SpreadReport {
            mean_ticks: s.spreads.iter().sum::<u64>() as f64 / s.spreads.len() as f64,
            acf: s.acf,
            histogram: s.histogram,
            tail_exponent: s.tail_exponent,
        }),
        Err(e) => {
            notes.push(format!("spread: {e}"));
            None
        }
    };

    let stress = rec.trigger_us.map(|trigger| stress_report(rec, trigger, calm, &mut notes));

    Report {
        schema_version: REPORT_SCHEMA_VERSION,
        seed: rec.config.agents.seed,
        trades: rec.prices.len(),
        final_price_ticks: rec.prices.last().map(|(_, p)| p.0),
        returns,
        lob,
        spread,
        stress,
        notes,
    }
}

fn stress_report(rec: &RunRecord, trigger: Timestamp, calm: Option<&CalmStats>, notes: &mut Vec<String>) -> StressReport {
    // On the 1-second grid, so a trough reached within the same second as
    // the trigger cannot produce an unbounded slope.
    let dt = MICROS_PER_SECOND;
    let grid = rec.price_series().and_then(|p| p.grid(0, rec.session_end(), dt));
    let drawdown = grid.as_ref().map_err(Clone::clone).and_then(|g| drawdown_slope(g, trigger));
    let trigger_price = grid.as_ref().ok().and_then(|g| g.at(trigger));
    if let Err(e) = &drawdown {
        notes.push(format!("drawdown slope: {e}"));
    }
    let impact = match calm {
        None => None,
        Some(c) => match rec.returns(dt).and_then(|r| detect_immediate_impact(&r, trigger, Some(c), &ImpactParams::default())) {
            Ok(w) => Some(w),
            Err(e) => {
                notes.push(format!("immediate impact: {e}"));
                None
            }
        },
    };
    StressReport {
        trigger_us: trigger,
        drawdown_relative: drawdown.as_ref().ok().zip(trigger_price).map(|(s, p)| s / p),
        drawdown_slope: drawdown.ok(),
        calm: calm.copied(),
        impact_duration_seconds: impact.filter(|w| w.detected).map(|w| w.duration_seconds(dt)),
        impact,
    }
}

/// Pooled 1-second return statistics over calm (no-stress) runs.
pub fn calm_stats<'a>(runs: impl IntoIterator<Item = &'a RunRecord>) -> anyhow::Result<CalmStats> {
    let series: Vec<Vec<f64>> = runs
        .into_iter()
        .map(|r| r.returns(MICROS_PER_SECOND).map(|s| s.values))
        .collect::<Result<_, _>>()?;
    Ok(CalmStats::from_returns(series.iter().map(|v| v.as_slice()))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decay_needs_a_falling_tail() {
        let mut profile = vec![1.0, 3.0, 5.0, 4.0, 3.0, 2.0, 1.5, 1.0, 0.5, 0.2];
        assert!(decays_beyond(&profile, 2));
        profile[9] = 4.0;
        assert!(!decays_beyond(&profile, 2));
        // Peak too close to the end to judge.
        assert!(!decays_beyond(&profile, 6));
    }
}
