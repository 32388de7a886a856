//! Arrival-ordered record of everything the sequencer applied.
//!
//! The exchange's output is a deterministic function of this stream: feeding
//! the entries to a fresh [`Exchange`] in order reproduces every arrival
//! sequence number, report, portfolio and trade of the live session. The
//! sequencer itself goes through [`apply`], so live and replayed runs share
//! one code path.

use std::io::{BufRead, Write};

use anyhow::Context;
use lobsim_core::exchange::{CancelRequest, Exchange, ExchangeConfig, NewOrderRequest, Outbound, Request};
use lobsim_core::order_book::GlobalQuote;
use lobsim_core::persist::TradeSink;
use lobsim_core::types::{Cash, Price, Symbol, Timestamp, TraderId};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum JournalEvent {
    OpenAccount {
        trader: TraderId,
        cash: Cash,
        holdings: Vec<(Symbol, u64)>,
    },
    NewOrder {
        trader: TraderId,
        request: NewOrderRequest,
    },
    Cancel {
        trader: TraderId,
        request: CancelRequest,
    },
    Quote {
        quote: GlobalQuote,
    },
    ExternalTrade {
        symbol: Symbol,
        price: Price,
        size: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub time_us: Timestamp,
    #[serde(flatten)]
    pub event: JournalEvent,
}

/// Apply one entry. Account setup produces no output and takes no sequence
/// number; a duplicate account is ignored.
pub fn apply(ex: &mut Exchange, entry: &JournalEntry) -> Vec<Outbound> {
    let now = entry.time_us;
    match &entry.event {
        JournalEvent::OpenAccount { trader, cash, holdings } => {
            if let Err(e) = ex.open_account(trader.clone(), *cash, holdings) {
                tracing::warn!("journal: {e}");
            }
            Vec::new()
        }
        JournalEvent::NewOrder { trader, request } => ex.ingest(now, trader, Request::NewOrder(request.clone())),
        JournalEvent::Cancel { trader, request } => ex.ingest(now, trader, Request::Cancel(request.clone())),
        JournalEvent::Quote { quote } => ex.apply_quote(now, quote.clone()),
        JournalEvent::ExternalTrade { symbol, price, size } => ex.apply_external_trade(now, symbol, *price, *size),
    }
}

pub fn write_entry<W: Write>(out: &mut W, entry: &JournalEntry) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, entry)?;
    out.write_all(b"\n")
}

pub fn read_journal<R: BufRead>(input: R) -> anyhow::Result<Vec<JournalEntry>> {
    let mut entries = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        entries.push(serde_json::from_str(&line).with_context(|| format!("journal line {}", i + 1))?);
    }
    Ok(entries)
}

/// Rebuild an exchange from a journal. Stops after the entry that brings the
/// arrival sequence to `until_seq`, when given.
pub fn replay(
    config: ExchangeConfig,
    sink: Box<dyn TradeSink>,
    entries: &[JournalEntry],
    until_seq: Option<u64>,
) -> Exchange {
    let mut ex = Exchange::with_sink(config, sink);
    for entry in entries {
        if until_seq.is_some_and(|s| ex.last_arrival_seq() >= s) && !matches!(entry.event, JournalEvent::OpenAccount { .. })
        {
            break;
        }
        apply(&mut ex, entry);
    }
    ex
}
