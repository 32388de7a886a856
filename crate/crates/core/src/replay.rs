//! Replay feed: recorded best quotes (and trade prints) streamed as the
//! global book.
//!
//! File format, comma separated, `#` starts a comment, an optional header row
//! beginning with `symbol` is skipped:
//!
//! ```text
//! symbol,time_us,bid_ticks,bid_size,ask_ticks,ask_size   # quote row
//! symbol,time_us,price_ticks,size                        # trade row
//! ```
//!
//! Times must be non-decreasing over the whole file and quotes uncrossed.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::order_book::GlobalQuote;
use crate::types::{Price, Symbol, Timestamp};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuoteTick {
    pub symbol: Symbol,
    pub source_time_us: Timestamp,
    pub best_bid: Price,
    pub bid_size: u64,
    pub best_ask: Price,
    pub ask_size: u64,
}

impl QuoteTick {
    pub fn to_global(&self, source_time: Timestamp) -> GlobalQuote {
        GlobalQuote {
            symbol: self.symbol.clone(),
            best_bid: self.best_bid,
            bid_size: self.bid_size,
            best_ask: self.best_ask,
            ask_size: self.ask_size,
            source_time,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TradeTick {
    pub symbol: Symbol,
    pub source_time_us: Timestamp,
    pub price: Price,
    pub size: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReplayEvent {
    Quote(QuoteTick),
    Trade(TradeTick),
}

impl ReplayEvent {
    pub fn source_time(&self) -> Timestamp {
        match self {
            ReplayEvent::Quote(q) => q.source_time_us,
            ReplayEvent::Trade(t) => t.source_time_us,
        }
    }

    pub fn symbol(&self) -> &Symbol {
        match self {
            ReplayEvent::Quote(q) => &q.symbol,
            ReplayEvent::Trade(t) => &t.symbol,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("line {line}: time {time} is earlier than the previous row ({previous})")]
    NonMonotoneTime {
        line: u64,
        time: Timestamp,
        previous: Timestamp,
    },
    #[error("line {line}: crossed quote, bid {bid} >= ask {ask}")]
    Crossed { line: u64, bid: Price, ask: Price },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl ReplayError {
    pub fn line(&self) -> Option<u64> {
        match self {
            ReplayError::Malformed { line, .. }
            | ReplayError::NonMonotoneTime { line, .. }
            | ReplayError::Crossed { line, .. } => Some(*line),
            ReplayError::Io(_) => None,
        }
    }
}

fn field<T: std::str::FromStr>(record: &csv::StringRecord, i: usize, name: &str, line: u64) -> Result<T, ReplayError> {
    let raw = record.get(i).unwrap_or_default();
    raw.parse().map_err(|_| ReplayError::Malformed {
        line,
        message: format!("bad {name} {raw:?}"),
    })
}

/// Parse and validate a replay file.
pub fn load<R: Read>(input: R) -> Result<Vec<ReplayEvent>, ReplayError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut events = Vec::new();
    let mut previous: Option<Timestamp> = None;
    for result in reader.records() {
        let record = result.map_err(|e| ReplayError::Malformed {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.iter().all(str::is_empty) {
            continue;
        }
        if record.get(0).is_some_and(|f| f.eq_ignore_ascii_case("symbol")) && events.is_empty() {
            continue;
        }
        let symbol = Symbol::new(record.get(0).unwrap_or_default());
        if symbol.as_str().is_empty() {
            return Err(ReplayError::Malformed {
                line,
                message: "empty symbol".into(),
            });
        }
        let time: Timestamp = field(&record, 1, "time_us", line)?;
        let event = match record.len() {
            6 => {
                let tick = QuoteTick {
                    symbol,
                    source_time_us: time,
                    best_bid: Price(field(&record, 2, "bid_ticks", line)?),
                    bid_size: field(&record, 3, "bid_size", line)?,
                    best_ask: Price(field(&record, 4, "ask_ticks", line)?),
                    ask_size: field(&record, 5, "ask_size", line)?,
                };
                if tick.best_bid >= tick.best_ask {
                    return Err(ReplayError::Crossed {
                        line,
                        bid: tick.best_bid,
                        ask: tick.best_ask,
                    });
                }
                ReplayEvent::Quote(tick)
            }
            4 => ReplayEvent::Trade(TradeTick {
                symbol,
                source_time_us: time,
                price: Price(field(&record, 2, "price_ticks", line)?),
                size: field(&record, 3, "size", line)?,
            }),
            n => {
                return Err(ReplayError::Malformed {
                    line,
                    message: format!("expected 6 (quote) or 4 (trade) fields, found {n}"),
                })
            }
        };
        if let Some(prev) = previous {
            if time < prev {
                return Err(ReplayError::NonMonotoneTime {
                    line,
                    time,
                    previous: prev,
                });
            }
        }
        previous = Some(time);
        events.push(event);
    }
    Ok(events)
}

pub fn load_path(path: impl AsRef<Path>) -> Result<Vec<ReplayEvent>, ReplayError> {
    load(std::fs::File::open(path)?)
}

/// Maps recorded source times onto the simulation clock and hands out events
/// as they come due. The first event is scheduled at `start`.
#[derive(Debug, Clone)]
pub struct ReplayCursor {
    events: Vec<ReplayEvent>,
    next: usize,
    source_origin: Timestamp,
    start: Timestamp,
}

impl ReplayCursor {
    pub fn new(events: Vec<ReplayEvent>, start: Timestamp) -> ReplayCursor {
        let source_origin = events.first().map_or(0, ReplayEvent::source_time);
        ReplayCursor {
            events,
            next: 0,
            source_origin,
            start,
        }
    }

    /// Keep only one symbol's events.
    pub fn for_symbol(events: &[ReplayEvent], symbol: &Symbol, start: Timestamp) -> ReplayCursor {
        let source_origin = events.first().map_or(0, ReplayEvent::source_time);
        ReplayCursor {
            events: events.iter().filter(|e| e.symbol() == symbol).cloned().collect(),
            next: 0,
            source_origin,
            start,
        }
    }

    pub fn scheduled_time(&self, event: &ReplayEvent) -> Timestamp {
        self.start + (event.source_time() - self.source_origin)
    }

    /// Simulation time of the next undelivered event.
    pub fn next_due(&self) -> Option<Timestamp> {
        self.events.get(self.next).map(|e| self.scheduled_time(e))
    }

    /// Pop the next event if it is due at `now`.
    pub fn pop_due(&mut self, now: Timestamp) -> Option<(Timestamp, ReplayEvent)> {
        let due = self.next_due()?;
        if due > now {
            return None;
        }
        let event = self.events[self.next].clone();
        self.next += 1;
        Some((due, event))
    }

    pub fn remaining(&self) -> usize {
        self.events.len() - self.next
    }
}
