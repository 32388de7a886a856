//! Zero-intelligence traders and stress traders.
//!
//! Agents are transport-agnostic: they turn a market view and their own
//! account mirror into client requests, and update the mirror from the
//! acknowledgments, reports and portfolio updates they receive.

mod config;
mod endow;
mod stress;
mod zi;

pub use config::{AgentConfig, ConfigError};
pub use endow::{endow, Endowment};
pub use stress::{stress_plan, StressConfig, StressOrder, StressPlan, StressTraders};
pub use zi::{schedule, Action, ActionRecord, MarketView, ZiAgent, ZiParams};
