use lobsim_core::types::{Timestamp, MICROS_PER_SECOND};
use serde::{Deserialize, Serialize};

use crate::series::{PriceSeries, ReturnSeries};
use crate::{AnalyticsError, Result};

/// Return mean and standard deviation from matched runs without a stress event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalmStats {
    pub mean: f64,
    pub std: f64,
    pub samples: usize,
}

impl CalmStats {
    /// Pooled over all given return series.
    pub fn from_returns<'a>(series: impl IntoIterator<Item = &'a [f64]>) -> Result<CalmStats> {
        let (mut n, mut sum, mut sum_sq) = (0usize, 0.0, 0.0);
        for s in series {
            for &r in s {
                n += 1;
                sum += r;
                sum_sq += r * r;
            }
        }
        if n < 2 {
            return Err(AnalyticsError::TooShort { needed: 2, have: n });
        }
        let mean = sum / n as f64;
        let var = ((sum_sq - n as f64 * mean * mean) / (n - 1) as f64).max(0.0);
        if var == 0.0 {
            return Err(AnalyticsError::ZeroVariance);
        }
        Ok(CalmStats {
            mean,
            std: var.sqrt(),
            samples: n,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpactParams {
    /// The search for the largest drop starts this long before the trigger...
    pub search_before: Timestamp,
    /// ...and ends this long after it.
    pub search_after: Timestamp,
    /// Expansion look-ahead on each side of the window.
    pub k: Timestamp,
    pub drop_sigmas: f64,
    pub expand_sigmas: f64,
    pub total_sigmas: f64,
}

impl Default for ImpactParams {
    fn default() -> Self {
        ImpactParams {
            search_before: 60 * MICROS_PER_SECOND,
            search_after: 300 * MICROS_PER_SECOND,
            k: 15 * MICROS_PER_SECOND,
            drop_sigmas: 3.0,
            expand_sigmas: 2.0,
            total_sigmas: 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpactWindow {
    /// Timestamp of the first return in the window.
    pub start_time: Timestamp,
    /// Timestamp of the last return in the window.
    pub end_time: Timestamp,
    pub total_return: f64,
    pub samples: usize,
    pub detected: bool,
}

impl ImpactWindow {
    pub fn duration_seconds(&self, dt: Timestamp) -> f64 {
        (self.end_time - self.start_time + dt) as f64 / MICROS_PER_SECOND as f64
    }
}

/// Locate the immediate price impact of a stress event.
///
/// 1. Find the most negative return within the search window around the
///    trigger; it must lie more than `drop_sigmas` below the calm mean.
/// 2. Grow the window: look `k` past each edge for returns at least
///    `expand_sigmas` from the calm mean and move the edge to the furthest
///    one found; repeat until neither edge moves.
/// 3. Report a detection when |Σr − μ·L| ≥ `total_sigmas`·σ, L being the
///    number of returns in the window.
pub fn detect_immediate_impact(
    returns: &ReturnSeries,
    trigger: Timestamp,
    calm: Option<&CalmStats>,
    params: &ImpactParams,
) -> Result<ImpactWindow> {
    let calm = calm.ok_or(AnalyticsError::MissingCalmStats)?;
    let (mu, sigma) = (calm.mean, calm.std);
    let r = &returns.values;
    let from = trigger.saturating_sub(params.search_before);
    let to = trigger + params.search_after;
    let mut tau0: Option<usize> = None;
    for i in 0..r.len() {
        let t = returns.time_of(i);
        if t < from {
            continue;
        }
        if t > to {
            break;
        }
        if tau0.is_none_or(|j| r[i] < r[j]) {
            tau0 = Some(i);
        }
    }
    let Some(tau0) = tau0 else {
        return Err(AnalyticsError::Invalid("no returns inside the search window".into()));
    };
    let window = |lo: usize, hi: usize, detected: bool| ImpactWindow {
        start_time: returns.time_of(lo),
        end_time: returns.time_of(hi),
        total_return: r[lo..=hi].iter().sum(),
        samples: hi - lo + 1,
        detected,
    };
    if r[tau0] >= mu - params.drop_sigmas * sigma {
        return Ok(window(tau0, tau0, false));
    }

    let k = (params.k / returns.dt).max(1) as usize;
    let big = |i: usize| (r[i] - mu).abs() >= params.expand_sigmas * sigma;
    let (mut lo, mut hi) = (tau0, tau0);
    loop {
        let mut moved = false;
        if let Some(j) = (hi + 1..=(hi + k).min(r.len().saturating_sub(1))).rev().find(|&j| big(j)) {
            hi = j;
            moved = true;
        }
        if let Some(j) = (lo.saturating_sub(k)..lo).find(|&j| big(j)) {
            lo = j;
            moved = true;
        }
        if !moved {
            break;
        }
    }
    let total: f64 = r[lo..=hi].iter().sum();
    let len = (hi - lo + 1) as f64;
    Ok(window(lo, hi, (total - mu * len).abs() >= params.total_sigmas * sigma))
}

/// (P_trough − P_trigger) / (t_trough − t_trigger) in dollars per second,
/// with the trough the first lowest price after the trigger.
pub fn drawdown_slope(prices: &PriceSeries, trigger: Timestamp) -> Result<f64> {
    let p0 = prices
        .at(trigger)
        .ok_or_else(|| AnalyticsError::Invalid("no price at the trigger time".into()))?;
    let start = prices.times.partition_point(|&t| t <= trigger);
    if start == prices.len() {
        return Err(AnalyticsError::TooShort { needed: 1, have: 0 });
    }
    let mut trough = start;
    for i in start + 1..prices.len() {
        if prices.prices[i] < prices.prices[trough] {
            trough = i;
        }
    }
    let dt = (prices.times[trough] - trigger) as f64 / MICROS_PER_SECOND as f64;
    Ok((prices.prices[trough] - p0) / dt)
}

#[cfg(test)]
mod tests {
    use super::*;

    const S: u64 = MICROS_PER_SECOND;

    #[test]
    fn linear_fall_has_slope_minus_one_cent_per_second() {
        let times: Vec<u64> = (0..=200).map(|i| i * S).collect();
        let prices: Vec<f64> = (0..=200)
            .map(|i| if i <= 100 { 100.0 } else { 100.0 - (i - 100) as f64 * 0.01 })
            .map(|p| if p < 99.0 { 99.0 } else { p })
            .collect();
        let p = PriceSeries::new(times, prices).unwrap();
        let slope = drawdown_slope(&p, 100 * S).unwrap();
        assert!((slope + 0.01).abs() < 1e-9, "{slope}");
    }

    #[test]
    fn flat_series_has_zero_slope_and_end_trigger_errors() {
        let p = PriceSeries::new(vec![0, S, 2 * S], vec![5.0; 3]).unwrap();
        assert_eq!(drawdown_slope(&p, S).unwrap(), 0.0);
        assert!(drawdown_slope(&p, 2 * S).is_err());
    }

    #[test]
    fn missing_calm_stats_is_an_error() {
        let r = ReturnSeries {
            origin: 0,
            dt: S,
            values: vec![0.0; 10],
        };
        assert_eq!(
            detect_immediate_impact(&r, 5 * S, None, &ImpactParams::default()),
            Err(AnalyticsError::MissingCalmStats)
        );
    }
}
