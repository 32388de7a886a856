//! Append-only trade log: one header line, then one JSON record per trade.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};
use std::time::{Duration, Instant};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::order_book::LiquiditySource;
use crate::types::{Cash, OrderId, Price, Side, Symbol, Timestamp, TraderId};

pub const TRADE_LOG_SCHEMA: &str = "lobsim.trades";
pub const TRADE_LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TradeRecord {
    pub exec_seq: u64,
    pub exec_time_us: Timestamp,
    pub symbol: Symbol,
    pub price_ticks: Price,
    pub size: u64,
    /// Absent when the buy side was the global book.
    pub buy_trader: Option<TraderId>,
    pub sell_trader: Option<TraderId>,
    pub buy_order_id: Option<OrderId>,
    pub sell_order_id: Option<OrderId>,
    pub liquidity_source: LiquiditySource,
    /// Side of the order that triggered the trade: the incoming order for a
    /// local cross, the local order for a global fill. Its account is updated
    /// first, which matters for average cost on self-trades.
    pub aggressor: Side,
    /// Total fee charged on this trade (both sides), written in cents.
    #[serde(rename = "fee_cents", with = "cents")]
    pub fee: Cash,
}

mod cents {
    use super::*;

    pub fn serialize<S: Serializer>(fee: &Cash, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(fee.cents())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Cash, D::Error> {
        let cents = f64::deserialize(d)?;
        Ok(Cash((cents * Cash::UNITS_PER_CENT as f64).round() as i64))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeLogHeader {
    pub schema: String,
    pub version: u32,
    pub fee_per_share: Cash,
    pub symbols: Vec<Symbol>,
}

impl TradeLogHeader {
    pub fn new(fee_per_share: Cash, symbols: Vec<Symbol>) -> TradeLogHeader {
        TradeLogHeader {
            schema: TRADE_LOG_SCHEMA.to_string(),
            version: TRADE_LOG_VERSION,
            fee_per_share,
            symbols,
        }
    }
}

/// Destination for executed trades.
pub trait TradeSink: Send {
    fn append(&mut self, record: &TradeRecord) -> io::Result<()>;

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// Discards everything.
#[derive(Debug, Default)]
pub struct NullSink;

impl TradeSink for NullSink {
    fn append(&mut self, _record: &TradeRecord) -> io::Result<()> {
        Ok(())
    }
}

/// Keeps records in memory.
#[derive(Debug, Default, Clone)]
pub struct MemorySink {
    pub records: Vec<TradeRecord>,
}

impl TradeSink for MemorySink {
    fn append(&mut self, record: &TradeRecord) -> io::Result<()> {
        self.records.push(record.clone());
        Ok(())
    }
}

/// Newline-delimited JSON writer, flushed every `flush_interval`.
pub struct TradeLogWriter<W: Write> {
    out: W,
    flush_interval: Duration,
    last_flush: Instant,
}

impl<W: Write> TradeLogWriter<W> {
    /// Writes the header line immediately.
    pub fn new(mut out: W, header: &TradeLogHeader, flush_interval: Duration) -> io::Result<Self> {
        serde_json::to_writer(&mut out, header)?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(TradeLogWriter {
            out,
            flush_interval,
            last_flush: Instant::now(),
        })
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write + Send> TradeSink for TradeLogWriter<W> {
    fn append(&mut self, record: &TradeRecord) -> io::Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        if self.last_flush.elapsed() >= self.flush_interval {
            self.out.flush()?;
            self.last_flush = Instant::now();
        }
        Ok(())
    }

    fn flush(&mut self) -> io::Result<()> {
        self.last_flush = Instant::now();
        self.out.flush()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("missing header line")]
    MissingHeader,
    #[error("unsupported log schema {0:?}")]
    Schema(String),
}

pub fn read_trade_log<R: BufRead>(input: R) -> Result<(TradeLogHeader, Vec<TradeRecord>), LogError> {
    let mut lines = input.lines().enumerate();
    let (_, first) = lines.next().ok_or(LogError::MissingHeader)?;
    let header: TradeLogHeader =
        serde_json::from_str(&first?).map_err(|source| LogError::Parse { line: 1, source })?;
    if header.schema != TRADE_LOG_SCHEMA {
        return Err(LogError::Schema(header.schema));
    }
    let mut records = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str(&line).map_err(|source| LogError::Parse { line: i + 1, source })?,
        );
    }
    Ok((header, records))
}

/// Per-trader holdings reconstructed from a trade log.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RebuiltAccount {
    /// Buying power plus any cash reserved for open orders.
    pub cash: Cash,
    pub shares: BTreeMap<Symbol, u64>,
    pub realized_pnl: Cash,
    pub fees_paid: Cash,
}

/// Replay trades on top of initial endowments. Cost basis and realized P&L
/// follow the same average-cost rule the exchange applies live.
pub fn rebuild_accounts(
    initial: &BTreeMap<TraderId, (Cash, BTreeMap<Symbol, (u64, Cash)>)>,
    fee_per_share: Cash,
    records: &[TradeRecord],
) -> BTreeMap<TraderId, RebuiltAccount> {
    struct Work {
        acct: RebuiltAccount,
        cost: BTreeMap<Symbol, Cash>,
    }
    let mut work: BTreeMap<TraderId, Work> = initial
        .iter()
        .map(|(t, (cash, holdings))| {
            (
                t.clone(),
                Work {
                    acct: RebuiltAccount {
                        cash: *cash,
                        shares: holdings.iter().map(|(s, (n, _))| (s.clone(), *n)).collect(),
                        ..Default::default()
                    },
                    cost: holdings.iter().map(|(s, (_, c))| (s.clone(), *c)).collect(),
                },
            )
        })
        .collect();

    for rec in records {
        let fee = fee_per_share.times(rec.size);
        let notional = rec.price_ticks.notional(rec.size);
        let order = match rec.aggressor {
            Side::Buy => [Side::Buy, Side::Sell],
            Side::Sell => [Side::Sell, Side::Buy],
        };
        for side in order {
            let trader = match side {
                Side::Buy => rec.buy_trader.as_ref(),
                Side::Sell => rec.sell_trader.as_ref(),
            };
            let Some(w) = trader.and_then(|t| work.get_mut(t)) else {
                continue;
            };
            w.acct.fees_paid += fee;
            let held = w.acct.shares.entry(rec.symbol.clone()).or_default();
            let cost = w.cost.entry(rec.symbol.clone()).or_default();
            match side {
                Side::Buy => {
                    w.acct.cash -= notional + fee;
                    *held += rec.size;
                    *cost += notional;
                }
                Side::Sell => {
                    w.acct.cash += notional - fee;
                    let basis = crate::exchange::cost_basis(*cost, *held, rec.size);
                    *held -= rec.size;
                    *cost -= basis;
                    w.acct.realized_pnl += notional - basis;
                }
            }
        }
    }
    work.into_iter().map(|(t, w)| (t, w.acct)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(seq: u64) -> TradeRecord {
        TradeRecord {
            exec_seq: seq,
            exec_time_us: seq * 1000,
            symbol: Symbol::from("CS1"),
            price_ticks: Price(10_003),
            size: 300,
            buy_trader: Some(TraderId::from("a")),
            sell_trader: None,
            buy_order_id: Some(OrderId(7)),
            sell_order_id: None,
            liquidity_source: LiquiditySource::Global,
            aggressor: Side::Buy,
            fee: Cash(300),
        }
    }

    #[test]
    fn empty_log_is_header_only() {
        let header = TradeLogHeader::new(Cash(1), vec![Symbol::from("CS1")]);
        let w = TradeLogWriter::new(Vec::new(), &header, Duration::ZERO).unwrap();
        let bytes = w.into_inner();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert_eq!(text.lines().count(), 1);
        let (h, recs) = read_trade_log(&bytes[..]).unwrap();
        assert_eq!(h, header);
        assert!(recs.is_empty());
    }

    #[test]
    fn records_round_trip_with_fee_in_cents() {
        let header = TradeLogHeader::new(Cash(1), vec![Symbol::from("CS1")]);
        let mut w = TradeLogWriter::new(Vec::new(), &header, Duration::ZERO).unwrap();
        w.append(&record(1)).unwrap();
        w.append(&record(2)).unwrap();
        let bytes = w.into_inner();
        let text = String::from_utf8(bytes.clone()).unwrap();
        let line = text.lines().nth(1).unwrap();
        assert!(line.contains("\"fee_cents\":3.0"), "{line}");
        assert!(line.contains("\"price_ticks\":10003"), "{line}");
        let (_, recs) = read_trade_log(&bytes[..]).unwrap();
        assert_eq!(recs, vec![record(1), record(2)]);
    }

    #[test]
    fn bad_line_reports_its_number() {
        let text = format!(
            "{}\n{}\nnot json\n",
            serde_json::to_string(&TradeLogHeader::new(Cash(0), vec![])).unwrap(),
            serde_json::to_string(&record(1)).unwrap()
        );
        match read_trade_log(text.as_bytes()) {
            Err(LogError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }
}
