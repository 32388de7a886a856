use std::collections::BTreeMap;

use lobsim_core::order_book::DepthSnapshot;
use lobsim_core::types::Price;
use serde::{Deserialize, Serialize};

use crate::stats::acf;
use crate::{AnalyticsError, Result};

/// Mean resting size by distance from the mid price, bids and asks pooled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LobShape {
    /// `mean_size[d]` is the average size found `d` ticks from the mid
    /// (distance rounded up), counting zero where a side had no level there.
    pub mean_size: Vec<f64>,
    pub snapshots_used: usize,
}

impl LobShape {
    /// Distance with the largest mean size, ties to the nearest.
    pub fn peak_distance(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (d, &v) in self.mean_size.iter().enumerate() {
            if v > 0.0 && best.is_none_or(|(_, b)| v > b) {
                best = Some((d, v));
            }
        }
        best.map(|(d, _)| d)
    }
}

pub fn lob_shape(snapshots: &[DepthSnapshot], max_distance: usize) -> LobShape {
    let mut sums = vec![0.0; max_distance + 1];
    let mut used = 0;
    for snap in snapshots {
        let (Some(bid), Some(ask)) = (snap.bids.first(), snap.asks.first()) else {
            continue;
        };
        used += 1;
        // Twice the mid, to stay in integers.
        let mid2 = bid.price.0 + ask.price.0;
        for level in snap.bids.iter().chain(&snap.asks) {
            let d = (2 * level.price.0).abs_diff(mid2).div_ceil(2) as usize;
            if d <= max_distance {
                sums[d] += level.size as f64;
            }
        }
    }
    // Each snapshot contributes one bid and one ask observation per distance.
    let obs = (2 * used) as f64;
    LobShape {
        mean_size: sums.into_iter().map(|s| if used > 0 { s / obs } else { 0.0 }).collect(),
        snapshots_used: used,
    }
}

/// Σ bid sizes − Σ ask sizes per snapshot.
pub fn imbalance(snapshots: &[DepthSnapshot]) -> Vec<i64> {
    snapshots
        .iter()
        .map(|s| {
            let bid: u64 = s.bids.iter().map(|l| l.size).sum();
            let ask: u64 = s.asks.iter().map(|l| l.size).sum();
            bid as i64 - ask as i64
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpreadStats {
    /// Spread in ticks at each sample where both sides were quoted.
    pub spreads: Vec<u64>,
    pub acf: Vec<f64>,
    /// Spread in ticks → number of samples.
    pub histogram: BTreeMap<u64, usize>,
    /// Power-law exponent of the spread's upper tail, when it can be fitted.
    pub tail_exponent: Option<f64>,
}

/// Spread series and its persistence. Samples missing a side are skipped.
pub fn spread_stats(quotes: &[(Option<Price>, Option<Price>)], max_lag: usize) -> Result<SpreadStats> {
    let spreads: Vec<u64> = quotes
        .iter()
        .filter_map(|(b, a)| match (b, a) {
            (Some(b), Some(a)) => Some(a.0.saturating_sub(b.0)),
            _ => None,
        })
        .collect();
    if spreads.is_empty() {
        return Err(AnalyticsError::Invalid("no sample with both sides quoted".into()));
    }
    let as_f: Vec<f64> = spreads.iter().map(|&s| s as f64).collect();
    let acf = acf(&as_f, max_lag)?;
    let mut histogram = BTreeMap::new();
    for &s in &spreads {
        *histogram.entry(s).or_insert(0) += 1;
    }
    let tail_exponent = tail_exponent(&as_f).ok();
    Ok(SpreadStats {
        spreads,
        acf,
        histogram,
        tail_exponent,
    })
}

/// Least-squares fit of ln S(v) against ln v, where S(v) = #(X ≥ v)/n,
/// over the distinct positive values in the top decade (S ≤ 0.1).
/// Returns the negated slope.
pub fn tail_exponent(xs: &[f64]) -> Result<f64> {
    let mut sorted: Vec<f64> = xs.iter().copied().filter(|x| *x > 0.0).collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let n = xs.len() as f64;
    let mut pts = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let v = sorted[i];
        let mut j = i;
        while j < sorted.len() && sorted[j] == v {
            j += 1;
        }
        // j values are ≥ v.
        let s = j as f64 / n;
        if s > 0.1 {
            break;
        }
        pts.push((v.ln(), s.ln()));
        i = j;
    }
    if pts.len() < 2 {
        return Err(AnalyticsError::TooShort { needed: 2, have: pts.len() });
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(AnalyticsError::ZeroVariance);
    }
    Ok(-sxy / sxx)
}
