use lobsim_core::types::{Price, Timestamp, MICROS_PER_SECOND};
use serde::{Deserialize, Serialize};

use crate::{AnalyticsError, Result};

/// Last-trade prices (dollars) at strictly increasing times.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PriceSeries {
    pub times: Vec<Timestamp>,
    pub prices: Vec<f64>,
}

impl PriceSeries {
    pub fn new(times: Vec<Timestamp>, prices: Vec<f64>) -> Result<PriceSeries> {
        if times.len() != prices.len() {
            return Err(AnalyticsError::Invalid("times and prices differ in length".into()));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(AnalyticsError::Invalid("times must be strictly increasing".into()));
        }
        if prices.iter().any(|p| !(*p > 0.0)) {
            return Err(AnalyticsError::Invalid("prices must be positive".into()));
        }
        Ok(PriceSeries { times, prices })
    }

    pub fn from_ticks(points: &[(Timestamp, Price)]) -> Result<PriceSeries> {
        PriceSeries::new(
            points.iter().map(|(t, _)| *t).collect(),
            points.iter().map(|(_, p)| p.dollars()).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Price in force at `t` (last observation at or before `t`).
    pub fn at(&self, t: Timestamp) -> Option<f64> {
        match self.times.partition_point(|&x| x <= t) {
            0 => None,
            i => Some(self.prices[i - 1]),
        }
    }

    /// Carry the last observation forward onto the grid `origin + k·step`,
    /// `k = 0..=n` with `n = floor((end − origin) / step)`.
    pub fn grid(&self, origin: Timestamp, end: Timestamp, step: Timestamp) -> Result<PriceSeries> {
        if step == 0 {
            return Err(AnalyticsError::Invalid("step must be positive".into()));
        }
        let first = self.at(origin).ok_or_else(|| {
            AnalyticsError::Invalid("no price at or before the grid origin".into())
        })?;
        let n = (end.saturating_sub(origin) / step) as usize;
        let mut times = Vec::with_capacity(n + 1);
        let mut prices = Vec::with_capacity(n + 1);
        let mut idx = self.times.partition_point(|&x| x <= origin);
        let mut last = first;
        for k in 0..=n {
            let t = origin + k as u64 * step;
            while idx < self.times.len() && self.times[idx] <= t {
                last = self.prices[idx];
                idx += 1;
            }
            times.push(t);
            prices.push(last);
        }
        Ok(PriceSeries { times, prices })
    }
}

/// Log returns on a regular grid. `values[i]` covers
/// `(origin + i·dt, origin + (i+1)·dt]` and is stamped at its right end.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReturnSeries {
    pub origin: Timestamp,
    pub dt: Timestamp,
    pub values: Vec<f64>,
}

impl ReturnSeries {
    pub fn dt_seconds(&self) -> f64 {
        self.dt as f64 / MICROS_PER_SECOND as f64
    }

    pub fn time_of(&self, i: usize) -> Timestamp {
        self.origin + (i as u64 + 1) * self.dt
    }

    /// Index of the return stamped at `t`, if `t` is on the grid.
    pub fn index_at(&self, t: Timestamp) -> Option<usize> {
        if t <= self.origin || (t - self.origin) % self.dt != 0 {
            return None;
        }
        let i = ((t - self.origin) / self.dt - 1) as usize;
        (i < self.values.len()).then_some(i)
    }

    pub fn squared(&self) -> Vec<f64> {
        self.values.iter().map(|r| r * r).collect()
    }

    /// Sum consecutive non-overlapping groups of `m` returns.
    pub fn aggregate(&self, m: usize) -> ReturnSeries {
        ReturnSeries {
            origin: self.origin,
            dt: self.dt * m as u64,
            values: self.values.chunks_exact(m).map(|c| c.iter().sum()).collect(),
        }
    }
}

/// Log returns at interval `dt` over the whole series, with the grid
/// starting at the first observation.
pub fn resample(series: &PriceSeries, dt: Timestamp) -> Result<ReturnSeries> {
    if dt == 0 {
        return Err(AnalyticsError::Invalid("dt must be positive".into()));
    }
    let (Some(&start), Some(&end)) = (series.times.first(), series.times.last()) else {
        return Err(AnalyticsError::TooShort { needed: 2, have: 0 });
    };
    resample_between(series, start, end, dt)
}

/// Log returns on the grid `origin + k·dt` up to `end`.
pub fn resample_between(series: &PriceSeries, origin: Timestamp, end: Timestamp, dt: Timestamp) -> Result<ReturnSeries> {
    if dt == 0 {
        return Err(AnalyticsError::Invalid("dt must be positive".into()));
    }
    let span = end.saturating_sub(origin);
    if span < 2 * dt {
        return Err(AnalyticsError::TooShort {
            needed: 2,
            have: (span / dt) as usize,
        });
    }
    let grid = series.grid(origin, end, dt)?;
    let values = grid.prices.windows(2).map(|w| (w[1] / w[0]).ln()).collect();
    Ok(ReturnSeries { origin, dt, values })
}
