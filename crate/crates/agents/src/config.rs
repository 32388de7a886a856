use lobsim_core::types::Price;
use serde::{Deserialize, Serialize};

/// Parameters of the background trader population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    /// Number of traders.
    pub n: usize,
    /// Session length in seconds.
    pub session_seconds: f64,
    /// Expected number of actions per trader per session.
    pub lambda: f64,
    /// Standard deviation of limit prices around the anchor, in dollars.
    pub sigma: f64,
    pub r_low: f64,
    pub r_high: f64,
    /// Symmetric Dirichlet concentration for the share endowment.
    pub alpha: f64,
    pub total_shares: u64,
    /// Initial price.
    pub p0: Price,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("agents.{field}: {message}")]
    Invalid { field: &'static str, message: String },
}

fn invalid(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        message: message.into(),
    }
}

impl AgentConfig {
    /// The baseline population: 200 traders over a 6.5-hour session.
    pub fn baseline(seed: u64) -> AgentConfig {
        AgentConfig {
            n: 200,
            session_seconds: 23_400.0,
            lambda: 390.0,
            sigma: 0.10,
            r_low: 0.2,
            r_high: 0.6,
            alpha: 200.0,
            total_shares: 2_000_000,
            p0: Price(10_000),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n == 0 {
            return Err(invalid("n", "need at least one trader"));
        }
        if !(self.session_seconds >= 0.0 && self.session_seconds.is_finite()) {
            return Err(invalid("session_seconds", format!("must be a non-negative number, got {}", self.session_seconds)));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(invalid("lambda", format!("must be positive, got {}", self.lambda)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(invalid("sigma", format!("must be positive, got {}", self.sigma)));
        }
        if !(0.0 < self.r_low && self.r_low < self.r_high && self.r_high <= 1.0) {
            return Err(invalid(
                "r_low/r_high",
                format!("need 0 < r_low < r_high <= 1, got {} and {}", self.r_low, self.r_high),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(invalid("alpha", format!("must be positive, got {}", self.alpha)));
        }
        if self.total_shares <= self.n as u64 {
            return Err(invalid(
                "total_shares",
                format!("must exceed the number of traders ({}), got {}", self.n, self.total_shares),
            ));
        }
        if self.p0.0 == 0 {
            return Err(invalid("p0", "must be positive"));
        }
        Ok(())
    }
}
