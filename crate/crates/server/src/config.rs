use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{ensure, Context};
use lobsim_core::exchange::{ExchangeConfig, SymbolConfig};
use lobsim_core::types::{Cash, Price, Symbol, TraderId};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymbolSpec {
    pub symbol: Symbol,
    /// Reference price in ticks of $0.01.
    pub p0: Price,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccountSpec {
    pub trader_id: TraderId,
    /// Starting cash in dollars.
    pub cash: f64,
    #[serde(default)]
    pub shares: BTreeMap<Symbol, u64>,
}

/// Endowment given to a trader id that logs in without a configured account.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefaultAccount {
    pub cash: f64,
    #[serde(default)]
    pub shares: BTreeMap<Symbol, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    /// Order-entry socket. Port 0 picks a free port.
    #[serde(default = "default_listen")]
    pub listen: SocketAddr,
    /// Browser gateway (websocket at `/ws`, static files elsewhere).
    #[serde(default)]
    pub web_listen: Option<SocketAddr>,
    #[serde(default)]
    pub static_dir: Option<PathBuf>,
    pub symbols: Vec<SymbolSpec>,
    /// Per-share fee in dollars, charged to each local side.
    #[serde(default)]
    pub fee_per_share: f64,
    #[serde(default = "default_buffer")]
    pub market_buy_buffer_pct: u64,
    /// Levels per side in DEPTH messages.
    #[serde(default = "default_depth")]
    pub depth_levels: usize,
    /// Simulation seconds per wall second. 1 is live.
    #[serde(default = "default_scale")]
    pub time_scale: f64,
    #[serde(default)]
    pub trade_log: Option<PathBuf>,
    /// Arrival-ordered input journal, replayable into a fresh exchange.
    #[serde(default)]
    pub journal: Option<PathBuf>,
    #[serde(default = "default_flush_ms")]
    pub flush_interval_ms: u64,
    /// Undelivered non-depth messages a session may accumulate before it is
    /// disconnected as a slow consumer.
    #[serde(default = "default_outbox")]
    pub outbox_capacity: usize,
    #[serde(default)]
    pub shared_secret: Option<String>,
    /// Recorded quotes streamed as the global book.
    #[serde(default)]
    pub replay: Option<PathBuf>,
    #[serde(default)]
    pub accounts: Vec<AccountSpec>,
    #[serde(default)]
    pub default_account: Option<DefaultAccount>,
}

fn default_listen() -> SocketAddr {
    "127.0.0.1:7400".parse().expect("valid address")
}

fn default_buffer() -> u64 {
    10
}

fn default_depth() -> usize {
    10
}

fn default_scale() -> f64 {
    1.0
}

fn default_flush_ms() -> u64 {
    100
}

fn default_outbox() -> usize {
    10_000
}

impl ServerConfig {
    /// One symbol, no accounts, ephemeral ports, nothing on disk.
    pub fn local(symbol: &str, p0: Price) -> ServerConfig {
        ServerConfig {
            listen: "127.0.0.1:0".parse().expect("valid address"),
            web_listen: None,
            static_dir: None,
            symbols: vec![SymbolSpec {
                symbol: Symbol::from(symbol),
                p0,
            }],
            fee_per_share: 0.0,
            market_buy_buffer_pct: default_buffer(),
            depth_levels: default_depth(),
            time_scale: 1.0,
            trade_log: None,
            journal: None,
            flush_interval_ms: default_flush_ms(),
            outbox_capacity: default_outbox(),
            shared_secret: None,
            replay: None,
            accounts: Vec::new(),
            default_account: None,
        }
    }

    pub fn from_toml(text: &str) -> anyhow::Result<ServerConfig> {
        let cfg: ServerConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Relative paths resolve against the config file's directory.
    pub fn load(path: &Path) -> anyhow::Result<ServerConfig> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = ServerConfig::from_toml(&text).with_context(|| format!("in {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.static_dir, &mut cfg.trade_log, &mut cfg.journal, &mut cfg.replay].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        ensure!(!self.symbols.is_empty(), "symbols: list at least one symbol");
        for s in &self.symbols {
            ensure!(s.p0.0 > 0, "symbols.p0: must be positive for {}", s.symbol);
        }
        let mut names: Vec<_> = self.symbols.iter().map(|s| &s.symbol).collect();
        names.sort();
        names.dedup();
        ensure!(names.len() == self.symbols.len(), "symbols: duplicate symbol");
        ensure!(
            self.fee_per_share >= 0.0 && self.fee_per_share.is_finite(),
            "fee_per_share: must be a non-negative dollar amount"
        );
        ensure!(self.depth_levels > 0, "depth_levels: must be at least 1");
        ensure!(self.time_scale >= 1.0 && self.time_scale.is_finite(), "time_scale: must be at least 1");
        ensure!(self.flush_interval_ms > 0, "flush_interval_ms: must be positive");
        ensure!(self.outbox_capacity > 0, "outbox_capacity: must be positive");
        let holdings = self
            .accounts
            .iter()
            .map(|a| (a.cash, &a.shares))
            .chain(self.default_account.iter().map(|d| (d.cash, &d.shares)));
        for (cash, shares) in holdings {
            ensure!(cash >= 0.0 && cash.is_finite(), "accounts.cash: must be a non-negative dollar amount");
            for sym in shares.keys() {
                ensure!(names.contains(&sym), "accounts.shares: unknown symbol {sym}");
            }
        }
        Ok(())
    }

    pub fn exchange_config(&self) -> ExchangeConfig {
        ExchangeConfig {
            symbols: self
                .symbols
                .iter()
                .map(|s| SymbolConfig {
                    symbol: s.symbol.clone(),
                    reference_price: s.p0,
                })
                .collect(),
            fee_per_share: Cash::from_dollars(self.fee_per_share),
            market_buy_buffer_pct: self.market_buy_buffer_pct,
        }
    }

    pub fn flush_interval(&self) -> Duration {
        Duration::from_millis(self.flush_interval_ms)
    }
}
