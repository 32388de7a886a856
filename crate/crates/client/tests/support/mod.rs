//! A real exchange on a background runtime, for driving the blocking client.

#![allow(dead_code)]

use std::fs::File;
use std::io::BufReader;
use std::net::SocketAddr;
use std::time::Duration;

use lobsim_core::exchange::Exchange;
use lobsim_core::persist::{read_trade_log, TradeRecord};
use lobsim_core::types::{Price, Symbol};
use lobsim_server::config::{DefaultAccount, SymbolSpec};
use lobsim_server::journal::{read_journal, JournalEntry};
use lobsim_server::{Server, ServerConfig};
use tempfile::TempDir;

pub const WAIT: Duration = Duration::from_secs(10);

pub struct TestServer {
    rt: tokio::runtime::Runtime,
    server: Option<Server>,
    pub dir: TempDir,
}

impl TestServer {
    /// Every trader id logs in with $1M and 10,000 shares of each symbol,
    /// all quoted around $100.
    pub fn start(symbols: &[&str]) -> TestServer {
        Self::start_with(symbols, |_| {})
    }

    pub fn start_with(symbols: &[&str], tweak: impl FnOnce(&mut ServerConfig)) -> TestServer {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ServerConfig::local(symbols[0], Price(10_000));
        cfg.symbols = symbols
            .iter()
            .map(|s| SymbolSpec {
                symbol: Symbol::from(*s),
                p0: Price(10_000),
            })
            .collect();
        cfg.default_account = Some(DefaultAccount {
            cash: 1_000_000.0,
            shares: symbols.iter().map(|s| (Symbol::from(*s), 10_000)).collect(),
        });
        cfg.trade_log = Some(dir.path().join("trades.jsonl"));
        cfg.journal = Some(dir.path().join("journal.ndjson"));
        tweak(&mut cfg);
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .unwrap();
        let server = rt.block_on(Server::start(cfg)).unwrap();
        TestServer {
            rt,
            server: Some(server),
            dir,
        }
    }

    pub fn addr(&self) -> SocketAddr {
        self.server.as_ref().unwrap().addr()
    }

    pub fn inspect<T: Send + 'static>(&self, f: impl FnOnce(&Exchange) -> T + Send + 'static) -> T {
        let hub = self.server.as_ref().unwrap().hub();
        self.rt.block_on(hub.inspect(f)).unwrap()
    }

    /// Stop the server and read back what it recorded.
    pub fn finish(mut self) -> Recorded {
        let server = self.server.take().unwrap();
        let exchange = self.rt.block_on(server.shutdown()).unwrap();
        let (_, trades) = read_trade_log(BufReader::new(File::open(self.dir.path().join("trades.jsonl")).unwrap())).unwrap();
        let journal = read_journal(BufReader::new(File::open(self.dir.path().join("journal.ndjson")).unwrap())).unwrap();
        Recorded {
            exchange,
            trades,
            journal,
        }
    }
}

pub struct Recorded {
    pub exchange: Exchange,
    pub trades: Vec<TradeRecord>,
    pub journal: Vec<JournalEntry>,
}
