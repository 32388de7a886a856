//! Statistics over simulation output: returns and their stylized facts, the
//! shape of the order book, spreads, and stress-event measures.
//!
//! Everything here is a pure function of recorded series.

pub mod lob;
pub mod series;
pub mod stats;
pub mod stress;

pub use lob::{imbalance, lob_shape, spread_stats, tail_exponent, LobShape, SpreadStats};
pub use series::{resample, resample_between, PriceSeries, ReturnSeries};
pub use stats::{acf, arch_lm_test, excess_kurtosis, qq_points, ArchTest};
pub use stress::{detect_immediate_impact, drawdown_slope, CalmStats, ImpactParams, ImpactWindow};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalyticsError {
    #[error("series too short: need {needed}, have {have}")]
    TooShort { needed: usize, have: usize },
    #[error("series has zero variance")]
    ZeroVariance,
    #[error("regression is singular")]
    Singular,
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("calm-period statistics are required")]
    MissingCalmStats,
}

pub type Result<T> = std::result::Result<T, AnalyticsError>;

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}
