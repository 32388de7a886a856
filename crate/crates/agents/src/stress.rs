use lobsim_core::types::{Timestamp, MICROS_PER_SECOND};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StressTraders {
    One,
    TwentySimultaneous,
    TwentyStaggered,
}

impl StressTraders {
    pub fn count(self) -> usize {
        match self {
            StressTraders::One => 1,
            _ => 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StressConfig {
    /// Fraction of the market's total shares sold by the stress traders.
    pub size_fraction: f64,
    pub traders: StressTraders,
    pub trigger_seconds: f64,
    #[serde(default = "default_stagger")]
    pub stagger_seconds: f64,
}

fn default_stagger() -> f64 {
    3.0
}

/// One crash sell: trader `trader` dumps `shares` at `time`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StressOrder {
    pub trader: usize,
    pub time: Timestamp,
    pub shares: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressPlan {
    /// Shares endowed to each stress trader, on top of the market's total.
    pub endowments: Vec<u64>,
    pub orders: Vec<StressOrder>,
    pub warning: Option<String>,
}

/// Endowments and market sells for the stress traders. Shares are split as
/// evenly as possible; the first traders take any remainder.
pub fn stress_plan(cfg: &StressConfig, total_shares: u64, session_seconds: f64) -> StressPlan {
    let count = cfg.traders.count();
    let stress_total = (cfg.size_fraction * total_shares as f64).round() as u64;
    let base = stress_total / count as u64;
    let extra = (stress_total % count as u64) as usize;
    let endowments: Vec<u64> = (0..count).map(|i| base + u64::from(i < extra)).collect();
    if cfg.trigger_seconds > session_seconds {
        return StressPlan {
            endowments,
            orders: Vec::new(),
            warning: Some(format!(
                "stress trigger at {} s is after the end of the {} s session; no stress orders",
                cfg.trigger_seconds, session_seconds
            )),
        };
    }
    let trigger = (cfg.trigger_seconds * MICROS_PER_SECOND as f64) as Timestamp;
    let stagger = (cfg.stagger_seconds * MICROS_PER_SECOND as f64) as Timestamp;
    let orders = endowments
        .iter()
        .enumerate()
        .map(|(i, &shares)| StressOrder {
            trader: i,
            time: match cfg.traders {
                StressTraders::TwentyStaggered => trigger + i as u64 * stagger,
                _ => trigger,
            },
            shares,
        })
        .collect();
    StressPlan {
        endowments,
        orders,
        warning: None,
    }
}
