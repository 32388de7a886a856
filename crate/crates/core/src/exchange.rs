//! Brokerage and order gateway.
//!
//! [`Exchange`] is the single total-ordering point of an exchange instance.
//! Every inbound message is stamped with the next arrival sequence number the
//! moment it is ingested; brokerage checks reserve cash or shares, the order
//! goes to its symbol's [`Book`], and resulting fills are applied to both
//! parties' portfolios and appended to the trade sink.
//!
//! `ingest` returns the outbound events in delivery order: acknowledgments
//! and execution reports for the owners first, then portfolio changes, then
//! public market data. The networked server and the in-process simulator
//! both drive this same type.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::order_book::{
    BestPrices, Book, CancelQty, DepthSnapshot, ExecutionReport, GlobalQuote, LiquiditySource,
    Order, ReportKind,
};
use crate::persist::{NullSink, TradeRecord, TradeSink};
use crate::types::{Cash, OrderId, OrderKind, Price, Side, Symbol, Timestamp, TraderId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolConfig {
    pub symbol: Symbol,
    /// Reference (previous close) price, used as the cost basis of endowed shares.
    pub reference_price: Price,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeConfig {
    pub symbols: Vec<SymbolConfig>,
    /// Flat fee charged to each local side of a trade, per share.
    pub fee_per_share: Cash,
    /// Market buys reserve against the combined best ask plus this percentage,
    /// and never execute above that price.
    pub market_buy_buffer_pct: u64,
}

impl ExchangeConfig {
    pub fn single(symbol: &str, reference_price: Price, fee_per_share: Cash) -> ExchangeConfig {
        ExchangeConfig {
            symbols: vec![SymbolConfig {
                symbol: Symbol::from(symbol),
                reference_price,
            }],
            fee_per_share,
            market_buy_buffer_pct: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, thiserror::Error)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    #[error("insufficient buying power")]
    InsufficientBuyingPower,
    #[error("insufficient shares")]
    InsufficientShares,
    #[error("unknown symbol")]
    UnknownSymbol,
    #[error("malformed message")]
    Malformed,
    #[error("unknown order")]
    UnknownOrder,
    #[error("unknown account")]
    UnknownAccount,
    #[error("order acceptance halted")]
    Halted,
    #[error("authentication failed")]
    AuthFailed,
    #[error("trader already has an active session")]
    AlreadyLoggedIn,
    #[error("not logged in")]
    NotLoggedIn,
    #[error("slow consumer")]
    SlowConsumer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewOrderRequest {
    /// Chosen by the client; unique per trader.
    pub client_order_id: u64,
    pub symbol: Symbol,
    pub side: Side,
    pub kind: OrderKind,
    pub size: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit_price: Option<Price>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CancelRequest {
    pub client_order_id: u64,
    /// Shares to remove; absent means all.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qty: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Request {
    NewOrder(NewOrderRequest),
    Cancel(CancelRequest),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub client_order_id: u64,
    pub order_id: Option<OrderId>,
    pub arrival_seq: u64,
    pub error: Option<ErrorCode>,
}

/// An execution report addressed to the order's owner.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderReport {
    pub client_order_id: u64,
    pub symbol: Symbol,
    pub side: Side,
    #[serde(flatten)]
    pub report: ExecutionReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Position {
    /// Shares owned, including any committed to open sell orders.
    pub shares: u64,
    pub total_cost: Cash,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Portfolio {
    pub trader_id: TraderId,
    /// Cash available for new orders (excludes reservations).
    pub buying_power: Cash,
    pub positions: BTreeMap<Symbol, Position>,
    pub realized_pnl: Cash,
    pub fees_paid: Cash,
}

impl Portfolio {
    pub fn shares(&self, symbol: &Symbol) -> u64 {
        self.positions.get(symbol).map_or(0, |p| p.shares)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpenOrderView {
    pub order_id: OrderId,
    pub client_order_id: u64,
    pub symbol: Symbol,
    pub side: Side,
    pub kind: OrderKind,
    pub limit_price: Option<Price>,
    pub size: u64,
    pub remaining: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccountSnapshot {
    pub portfolio: Portfolio,
    pub reserved_cash: Cash,
    pub reserved_shares: BTreeMap<Symbol, u64>,
    pub open_orders: Vec<OpenOrderView>,
    /// Highest client order id this trader has used. Ids are never reused,
    /// so a reconnecting client continues above it.
    #[serde(default)]
    pub max_client_order_id: u64,
    /// Arrival sequence number of the last message applied.
    pub as_of_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BookSnapshot {
    pub symbol: Symbol,
    pub depth: DepthSnapshot,
    pub best: BestPrices,
    pub last_price: Option<Price>,
    pub as_of_seq: u64,
}

/// Events produced by one ingested message, in delivery order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outbound {
    Ack {
        trader: TraderId,
        ack: Ack,
    },
    Report {
        trader: TraderId,
        report: OrderReport,
    },
    PortfolioChanged(TraderId),
    LastPrice {
        symbol: Symbol,
        price: Price,
        size: u64,
        time: Timestamp,
    },
    BestPrice {
        symbol: Symbol,
        best: BestPrices,
        time: Timestamp,
    },
    /// The local depth of `symbol` changed; the publisher snapshots it.
    DepthChanged(Symbol),
}

#[derive(Debug, Clone)]
struct OpenOrder {
    client_order_id: u64,
    trader: TraderId,
    symbol: Symbol,
    side: Side,
    kind: OrderKind,
    limit_price: Option<Price>,
    /// Cash held per unfilled share (price bound plus fee for buys, fee for sells).
    reserve_per_share: Cash,
    size: u64,
    remaining: u64,
}

#[derive(Debug, Clone)]
struct Account {
    portfolio: Portfolio,
    reserved_cash: Cash,
    reserved_shares: BTreeMap<Symbol, u64>,
    /// Every order this trader ever placed: client id to (order id, symbol, side).
    client_orders: HashMap<u64, (OrderId, Symbol, Side)>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SetupError {
    #[error("account {0} already exists")]
    DuplicateAccount(TraderId),
    #[error("unknown symbol {0}")]
    UnknownSymbol(Symbol),
}

/// Totals used by the conservation checks.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Audit {
    pub buying_power: Cash,
    pub reserved_cash: Cash,
    pub fees_collected: Cash,
    pub initial_cash: Cash,
    /// Net cash paid out to the global book (buys minus sells).
    pub paid_to_global: Cash,
    pub owned_shares: BTreeMap<Symbol, u64>,
    pub reserved_shares: BTreeMap<Symbol, u64>,
    pub resting_sell_shares: BTreeMap<Symbol, u64>,
    pub endowed_shares: BTreeMap<Symbol, u64>,
    /// Net shares bought from the global book.
    pub bought_from_global: BTreeMap<Symbol, i64>,
}

pub struct Exchange {
    config: ExchangeConfig,
    books: BTreeMap<Symbol, Book>,
    reference: HashMap<Symbol, Price>,
    accounts: BTreeMap<TraderId, Account>,
    open: HashMap<OrderId, OpenOrder>,
    last_best: HashMap<Symbol, BestPrices>,
    next_order_id: u64,
    next_arrival_seq: u64,
    next_exec_seq: u64,
    fees_collected: Cash,
    initial_cash: Cash,
    paid_to_global: Cash,
    endowed: BTreeMap<Symbol, u64>,
    bought_from_global: BTreeMap<Symbol, i64>,
    sink: Box<dyn TradeSink>,
    halted: bool,
}

impl std::fmt::Debug for Exchange {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Exchange")
            .field("symbols", &self.books.keys().collect::<Vec<_>>())
            .field("accounts", &self.accounts.len())
            .field("open_orders", &self.open.len())
            .field("arrival_seq", &self.next_arrival_seq)
            .field("halted", &self.halted)
            .finish()
    }
}

/// Cost basis of `qty` out of `held` shares that together cost `total`.
pub fn cost_basis(total: Cash, held: u64, qty: u64) -> Cash {
    if qty >= held {
        total
    } else {
        Cash((total.0 as i128 * qty as i128 / held as i128) as i64)
    }
}

impl Exchange {
    pub fn new(config: ExchangeConfig) -> Exchange {
        Exchange::with_sink(config, Box::new(NullSink))
    }

    pub fn with_sink(config: ExchangeConfig, sink: Box<dyn TradeSink>) -> Exchange {
        let books = config
            .symbols
            .iter()
            .map(|s| (s.symbol.clone(), Book::new(s.symbol.clone())))
            .collect();
        let reference = config
            .symbols
            .iter()
            .map(|s| (s.symbol.clone(), s.reference_price))
            .collect();
        let endowed = config
            .symbols
            .iter()
            .map(|s| (s.symbol.clone(), 0))
            .collect();
        Exchange {
            config,
            books,
            reference,
            accounts: BTreeMap::new(),
            open: HashMap::new(),
            last_best: HashMap::new(),
            next_order_id: 1,
            next_arrival_seq: 1,
            next_exec_seq: 1,
            fees_collected: Cash::ZERO,
            initial_cash: Cash::ZERO,
            paid_to_global: Cash::ZERO,
            endowed,
            bought_from_global: BTreeMap::new(),
            sink,
            halted: false,
        }
    }

    pub fn config(&self) -> &ExchangeConfig {
        &self.config
    }

    pub fn symbols(&self) -> impl Iterator<Item = &Symbol> {
        self.books.keys()
    }

    pub fn book(&self, symbol: &Symbol) -> Option<&Book> {
        self.books.get(symbol)
    }

    pub fn is_halted(&self) -> bool {
        self.halted
    }

    /// Stop accepting new orders. Cancels still go through.
    pub fn halt(&mut self) {
        self.halted = true;
    }

    pub fn has_account(&self, trader: &TraderId) -> bool {
        self.accounts.contains_key(trader)
    }

    pub fn traders(&self) -> impl Iterator<Item = &TraderId> {
        self.accounts.keys()
    }

    /// Sequence number of the most recently ingested message (0 before any).
    pub fn last_arrival_seq(&self) -> u64 {
        self.next_arrival_seq - 1
    }

    pub fn flush_sink(&mut self) -> std::io::Result<()> {
        self.sink.flush()
    }

    /// Replace the trade sink, returning the previous one.
    pub fn replace_sink(&mut self, sink: Box<dyn TradeSink>) -> Box<dyn TradeSink> {
        std::mem::replace(&mut self.sink, sink)
    }

    /// Create an account with starting cash and share holdings. Endowed
    /// shares carry the symbol's reference price as cost basis.
    pub fn open_account(
        &mut self,
        trader: TraderId,
        cash: Cash,
        holdings: &[(Symbol, u64)],
    ) -> Result<(), SetupError> {
        if self.accounts.contains_key(&trader) {
            return Err(SetupError::DuplicateAccount(trader));
        }
        let mut positions = BTreeMap::new();
        for (symbol, shares) in holdings {
            let reference = *self
                .reference
                .get(symbol)
                .ok_or_else(|| SetupError::UnknownSymbol(symbol.clone()))?;
            positions.insert(
                symbol.clone(),
                Position {
                    shares: *shares,
                    total_cost: reference.notional(*shares),
                },
            );
        }
        for (symbol, shares) in holdings {
            *self.endowed.get_mut(symbol).expect("checked above") += shares;
        }
        self.initial_cash += cash;
        self.accounts.insert(
            trader.clone(),
            Account {
                portfolio: Portfolio {
                    trader_id: trader,
                    buying_power: cash,
                    positions,
                    realized_pnl: Cash::ZERO,
                    fees_paid: Cash::ZERO,
                },
                reserved_cash: Cash::ZERO,
                reserved_shares: BTreeMap::new(),
                client_orders: HashMap::new(),
            },
        );
        Ok(())
    }

    pub fn portfolio(&self, trader: &TraderId) -> Option<&Portfolio> {
        self.accounts.get(trader).map(|a| &a.portfolio)
    }

    /// Point-in-time account view, tagged with the current arrival sequence.
    pub fn snapshot_state(&self, trader: &TraderId) -> Option<AccountSnapshot> {
        let account = self.accounts.get(trader)?;
        let mut open_orders: Vec<OpenOrderView> = account
            .client_orders
            .values()
            .filter_map(|(id, _, _)| self.open.get(id).map(|o| (id, o)))
            .map(|(id, o)| OpenOrderView {
                order_id: *id,
                client_order_id: o.client_order_id,
                symbol: o.symbol.clone(),
                side: o.side,
                kind: o.kind,
                limit_price: o.limit_price,
                size: o.size,
                remaining: o.remaining,
            })
            .collect();
        open_orders.sort_by_key(|o| o.order_id);
        Some(AccountSnapshot {
            portfolio: account.portfolio.clone(),
            reserved_cash: account.reserved_cash,
            reserved_shares: account.reserved_shares.clone(),
            open_orders,
            max_client_order_id: account.client_orders.keys().copied().max().unwrap_or(0),
            as_of_seq: self.last_arrival_seq(),
        })
    }

    /// Full current depth and prices for a newly connected client.
    pub fn bootstrap(&self, symbol: &Symbol) -> Option<BookSnapshot> {
        let book = self.books.get(symbol)?;
        Some(BookSnapshot {
            symbol: symbol.clone(),
            depth: book.full_depth(),
            best: book.best_prices(),
            last_price: book.last_trade_price(),
            as_of_seq: self.last_arrival_seq(),
        })
    }

    fn next_seq(&mut self) -> u64 {
        let seq = self.next_arrival_seq;
        self.next_arrival_seq += 1;
        seq
    }

    /// Apply one client message. The arrival sequence number is assigned here.
    pub fn ingest(&mut self, now: Timestamp, trader: &TraderId, request: Request) -> Vec<Outbound> {
        let seq = self.next_seq();
        let mut batch = Batch::default();
        match request {
            Request::NewOrder(req) => self.new_order(now, seq, trader, req, &mut batch),
            Request::Cancel(req) => self.cancel(now, seq, trader, req, &mut batch),
        }
        self.finish(now, batch)
    }

    /// Install a replayed quote as the symbol's global book. Goes through the
    /// same sequencing as client messages.
    pub fn apply_quote(&mut self, now: Timestamp, quote: GlobalQuote) -> Vec<Outbound> {
        self.next_seq();
        let mut batch = Batch::default();
        let symbol = quote.symbol.clone();
        let Some(book) = self.books.get_mut(&symbol) else {
            return Vec::new();
        };
        let reports = book.set_global_quote(quote, now);
        batch.touched.push(symbol.clone());
        for report in reports {
            self.handle_report(now, &symbol, None, report, &mut batch);
        }
        self.finish(now, batch)
    }

    /// A historical trade print: updates the last price only.
    pub fn apply_external_trade(
        &mut self,
        now: Timestamp,
        symbol: &Symbol,
        price: Price,
        size: u64,
    ) -> Vec<Outbound> {
        self.next_seq();
        let Some(book) = self.books.get_mut(symbol) else {
            return Vec::new();
        };
        book.record_external_trade(price);
        vec![Outbound::LastPrice {
            symbol: symbol.clone(),
            price,
            size,
            time: now,
        }]
    }

    fn reject(&self, trader: &TraderId, client_order_id: u64, seq: u64, error: ErrorCode, batch: &mut Batch) {
        batch.private.push(Outbound::Ack {
            trader: trader.clone(),
            ack: Ack {
                client_order_id,
                order_id: None,
                arrival_seq: seq,
                error: Some(error),
            },
        });
    }

    fn new_order(
        &mut self,
        now: Timestamp,
        seq: u64,
        trader: &TraderId,
        req: NewOrderRequest,
        batch: &mut Batch,
    ) {
        let cid = req.client_order_id;
        if self.halted {
            return self.reject(trader, cid, seq, ErrorCode::Halted, batch);
        }
        let Some(account) = self.accounts.get(trader) else {
            return self.reject(trader, cid, seq, ErrorCode::UnknownAccount, batch);
        };
        let Some(book) = self.books.get(&req.symbol) else {
            return self.reject(trader, cid, seq, ErrorCode::UnknownSymbol, batch);
        };
        let malformed = req.size == 0
            || account.client_orders.contains_key(&cid)
            || match req.kind {
                OrderKind::Limit => req.limit_price.is_none_or(|p| p.0 == 0),
                OrderKind::Market => req.limit_price.is_some(),
            };
        if malformed {
            return self.reject(trader, cid, seq, ErrorCode::Malformed, batch);
        }

        let fee = self.config.fee_per_share;
        let mut protection = None;
        let reserve_per_share = match (req.side, req.kind) {
            (Side::Buy, OrderKind::Limit) => {
                req.limit_price.expect("checked").notional(1) + fee
            }
            (Side::Buy, OrderKind::Market) => match book.best_prices().combined.ask {
                Some(ask) => {
                    let pct = 100 + self.config.market_buy_buffer_pct;
                    let collar = Price((ask.price.0 * pct).div_ceil(100));
                    protection = Some(collar);
                    collar.notional(1) + fee
                }
                // Nothing to buy; the book rejects it without touching cash.
                None => Cash::ZERO,
            },
            (Side::Sell, _) => fee,
        };
        let cash_needed = reserve_per_share.times(req.size);
        if cash_needed > account.portfolio.buying_power {
            return self.reject(trader, cid, seq, ErrorCode::InsufficientBuyingPower, batch);
        }
        if req.side == Side::Sell {
            let owned = account.portfolio.shares(&req.symbol);
            let reserved = account.reserved_shares.get(&req.symbol).copied().unwrap_or(0);
            if owned - reserved < req.size {
                return self.reject(trader, cid, seq, ErrorCode::InsufficientShares, batch);
            }
        }

        let order_id = OrderId(self.next_order_id);
        self.next_order_id += 1;
        let account = self.accounts.get_mut(trader).expect("checked");
        account.portfolio.buying_power -= cash_needed;
        account.reserved_cash += cash_needed;
        if req.side == Side::Sell {
            *account.reserved_shares.entry(req.symbol.clone()).or_default() += req.size;
        }
        account.client_orders.insert(cid, (order_id, req.symbol.clone(), req.side));
        // The reservation moved buying power.
        batch.dirty(trader);
        self.open.insert(
            order_id,
            OpenOrder {
                client_order_id: cid,
                trader: trader.clone(),
                symbol: req.symbol.clone(),
                side: req.side,
                kind: req.kind,
                limit_price: req.limit_price,
                reserve_per_share,
                size: req.size,
                remaining: req.size,
            },
        );
        batch.private.push(Outbound::Ack {
            trader: trader.clone(),
            ack: Ack {
                client_order_id: cid,
                order_id: Some(order_id),
                arrival_seq: seq,
                error: None,
            },
        });

        let order = Order {
            order_id,
            trader_id: trader.clone(),
            symbol: req.symbol.clone(),
            side: req.side,
            kind: req.kind,
            limit_price: req.limit_price,
            protection,
            size: req.size,
            remaining: req.size,
            arrival_seq: seq,
            arrival_time: now,
        };
        let reports = self
            .books
            .get_mut(&req.symbol)
            .expect("checked")
            .submit(order, now);
        batch.touched.push(req.symbol.clone());
        for report in reports {
            self.handle_report(now, &req.symbol, Some(order_id), report, batch);
        }
    }

    fn cancel(
        &mut self,
        now: Timestamp,
        seq: u64,
        trader: &TraderId,
        req: CancelRequest,
        batch: &mut Batch,
    ) {
        let Some(account) = self.accounts.get(trader) else {
            return self.reject(trader, req.client_order_id, seq, ErrorCode::UnknownAccount, batch);
        };
        let Some((order_id, symbol, side)) = account.client_orders.get(&req.client_order_id).cloned()
        else {
            return self.reject(trader, req.client_order_id, seq, ErrorCode::UnknownOrder, batch);
        };
        let qty = match req.qty {
            None => CancelQty::All,
            Some(n) => CancelQty::Shares(n),
        };
        let report = self
            .books
            .get_mut(&symbol)
            .expect("orders reference known symbols")
            .cancel(order_id, qty, now);
        if report.kind == ReportKind::Canceled {
            batch.touched.push(symbol.clone());
            self.handle_report(now, &symbol, None, report, batch);
        } else {
            // Filled or canceled before this arrived; nothing changes.
            batch.private.push(Outbound::Report {
                trader: trader.clone(),
                report: OrderReport {
                    client_order_id: req.client_order_id,
                    symbol,
                    side,
                    report,
                },
            });
        }
    }

    fn handle_report(
        &mut self,
        now: Timestamp,
        symbol: &Symbol,
        incoming: Option<OrderId>,
        report: ExecutionReport,
        batch: &mut Batch,
    ) {
        let Some(open) = self.open.get(&report.order_id) else {
            return;
        };
        let owner = open.trader.clone();
        let side = open.side;
        let client_order_id = open.client_order_id;

        match report.kind {
            ReportKind::Fill | ReportKind::PartialFill => {
                let price = report.trade_price.expect("fills carry a price");
                let qty = report.trade_size;
                let makes_record = report.liquidity_source == LiquiditySource::Global
                    || Some(report.order_id) == incoming;
                if makes_record {
                    self.record_trade(now, symbol, &report, side, price, qty, batch);
                }
                self.apply_fill(report.order_id, price, qty);
                batch.dirty(&owner);
            }
            ReportKind::Canceled => {
                self.release(report.order_id, report.trade_size);
                batch.dirty(&owner);
            }
            ReportKind::Rejected => {
                let remaining = open.remaining;
                self.release(report.order_id, remaining);
                batch.dirty(&owner);
            }
            ReportKind::Accepted => {}
        }
        if report.leaves == 0 && report.kind != ReportKind::Accepted {
            self.close(report.order_id);
        }
        batch.private.push(Outbound::Report {
            trader: owner,
            report: OrderReport {
                client_order_id,
                symbol: symbol.clone(),
                side,
                report,
            },
        });
    }

    #[allow(clippy::too_many_arguments)]
    fn record_trade(
        &mut self,
        now: Timestamp,
        symbol: &Symbol,
        report: &ExecutionReport,
        side: Side,
        price: Price,
        qty: u64,
        batch: &mut Batch,
    ) {
        let me = (
            self.open.get(&report.order_id).map(|o| o.trader.clone()),
            Some(report.order_id),
        );
        let counter = match report.counter_order_id {
            Some(id) => (self.open.get(&id).map(|o| o.trader.clone()), Some(id)),
            None => (None, None),
        };
        let ((buy_trader, buy_order_id), (sell_trader, sell_order_id)) = match side {
            Side::Buy => (me, counter),
            Side::Sell => (counter, me),
        };
        let local_sides = buy_trader.is_some() as u64 + sell_trader.is_some() as u64;
        let record = TradeRecord {
            exec_seq: self.next_exec_seq,
            exec_time_us: now,
            symbol: symbol.clone(),
            price_ticks: price,
            size: qty,
            buy_trader,
            sell_trader,
            buy_order_id,
            sell_order_id,
            liquidity_source: report.liquidity_source,
            aggressor: side,
            fee: self.config.fee_per_share.times(qty * local_sides),
        };
        self.next_exec_seq += 1;
        if report.liquidity_source == LiquiditySource::Global {
            let flow = price.notional(qty);
            let bought = self.bought_from_global.entry(symbol.clone()).or_default();
            match side {
                Side::Buy => {
                    self.paid_to_global += flow;
                    *bought += qty as i64;
                }
                Side::Sell => {
                    self.paid_to_global -= flow;
                    *bought -= qty as i64;
                }
            }
        }
        if self.sink.append(&record).is_err() {
            // Fail-stop: nothing new is accepted once trades cannot be persisted.
            self.halted = true;
        }
        batch.trades.push((symbol.clone(), price, qty));
    }

    fn apply_fill(&mut self, order_id: OrderId, price: Price, qty: u64) {
        let fee = self.config.fee_per_share.times(qty);
        let open = self.open.get_mut(&order_id).expect("fill for an open order");
        open.remaining -= qty;
        let release = open.reserve_per_share.times(qty);
        let account = self
            .accounts
            .get_mut(&open.trader)
            .expect("open orders belong to accounts");
        let notional = price.notional(qty);
        account.reserved_cash -= release;
        account.portfolio.fees_paid += fee;
        self.fees_collected += fee;
        let position = account.portfolio.positions.entry(open.symbol.clone()).or_default();
        match open.side {
            Side::Buy => {
                account.portfolio.buying_power += release - notional - fee;
                position.shares += qty;
                position.total_cost += notional;
            }
            Side::Sell => {
                account.portfolio.buying_power += release + notional - fee;
                let basis = cost_basis(position.total_cost, position.shares, qty);
                position.shares -= qty;
                position.total_cost -= basis;
                account.portfolio.realized_pnl += notional - basis;
                *account
                    .reserved_shares
                    .get_mut(&open.symbol)
                    .expect("sell orders reserve shares") -= qty;
            }
        }
    }

    fn release(&mut self, order_id: OrderId, qty: u64) {
        let open = self.open.get_mut(&order_id).expect("release for an open order");
        let qty = qty.min(open.remaining);
        open.remaining -= qty;
        let release = open.reserve_per_share.times(qty);
        let account = self
            .accounts
            .get_mut(&open.trader)
            .expect("open orders belong to accounts");
        account.reserved_cash -= release;
        account.portfolio.buying_power += release;
        if open.side == Side::Sell {
            *account
                .reserved_shares
                .get_mut(&open.symbol)
                .expect("sell orders reserve shares") -= qty;
        }
    }

    fn close(&mut self, order_id: OrderId) {
        if let Some(open) = self.open.remove(&order_id) {
            debug_assert_eq!(open.remaining, 0, "closing an order with shares left");
        }
    }

    fn finish(&mut self, now: Timestamp, batch: Batch) -> Vec<Outbound> {
        let mut out = batch.private;
        out.extend(batch.dirty.into_iter().map(Outbound::PortfolioChanged));
        out.extend(batch.trades.into_iter().map(|(symbol, price, size)| Outbound::LastPrice {
            symbol,
            price,
            size,
            time: now,
        }));
        let mut touched = batch.touched;
        touched.dedup();
        for symbol in touched {
            let best = self.books[&symbol].best_prices();
            if self.last_best.get(&symbol) != Some(&best) {
                self.last_best.insert(symbol.clone(), best);
                out.push(Outbound::BestPrice {
                    symbol: symbol.clone(),
                    best,
                    time: now,
                });
            }
            out.push(Outbound::DepthChanged(symbol));
        }
        out
    }

    /// Totals for the conservation invariants.
    pub fn audit(&self) -> Audit {
        let mut audit = Audit {
            fees_collected: self.fees_collected,
            initial_cash: self.initial_cash,
            paid_to_global: self.paid_to_global,
            endowed_shares: self.endowed.clone(),
            bought_from_global: self.bought_from_global.clone(),
            ..Default::default()
        };
        for account in self.accounts.values() {
            audit.buying_power += account.portfolio.buying_power;
            audit.reserved_cash += account.reserved_cash;
            for (symbol, pos) in &account.portfolio.positions {
                *audit.owned_shares.entry(symbol.clone()).or_default() += pos.shares;
            }
            for (symbol, n) in &account.reserved_shares {
                *audit.reserved_shares.entry(symbol.clone()).or_default() += n;
            }
        }
        for (symbol, book) in &self.books {
            let resting: u64 = book
                .resting_orders()
                .filter(|o| o.side == Side::Sell)
                .map(|o| o.remaining)
                .sum();
            audit.resting_sell_shares.insert(symbol.clone(), resting);
        }
        audit
    }

    /// Check share and cash conservation plus non-negativity of every account.
    pub fn check_invariants(&self) -> Result<(), String> {
        let audit = self.audit();
        let cash_now = audit.buying_power + audit.reserved_cash + audit.fees_collected;
        let cash_expected = audit.initial_cash - audit.paid_to_global;
        if cash_now != cash_expected {
            return Err(format!(
                "cash not conserved: have {cash_now}, expected {cash_expected}"
            ));
        }
        for (symbol, endowed) in &audit.endowed_shares {
            let owned = audit.owned_shares.get(symbol).copied().unwrap_or(0) as i64;
            let external = audit.bought_from_global.get(symbol).copied().unwrap_or(0);
            if owned != *endowed as i64 + external {
                return Err(format!(
                    "{symbol}: owned {owned} != endowed {endowed} + global {external}"
                ));
            }
            let reserved = audit.reserved_shares.get(symbol).copied().unwrap_or(0);
            let resting = audit.resting_sell_shares.get(symbol).copied().unwrap_or(0);
            if reserved != resting {
                return Err(format!(
                    "{symbol}: reserved {reserved} != resting sells {resting}"
                ));
            }
        }
        let mut reserved_by_orders: HashMap<&TraderId, Cash> = HashMap::new();
        for open in self.open.values() {
            *reserved_by_orders.entry(&open.trader).or_default() +=
                open.reserve_per_share.times(open.remaining);
        }
        for (trader, account) in &self.accounts {
            if account.portfolio.buying_power < Cash::ZERO {
                return Err(format!("{trader}: negative buying power"));
            }
            let expected = reserved_by_orders.get(trader).copied().unwrap_or_default();
            if account.reserved_cash != expected {
                return Err(format!(
                    "{trader}: reserved cash {} != open orders {}",
                    account.reserved_cash, expected
                ));
            }
            for (symbol, n) in &account.reserved_shares {
                if *n > account.portfolio.shares(symbol) {
                    return Err(format!("{trader}: reserved more {symbol} than owned"));
                }
            }
        }
        for book in self.books.values() {
            let best = book.best_prices().local;
            if let (Some(b), Some(a)) = (best.bid, best.ask) {
                if b.price >= a.price {
                    return Err(format!("{} crossed: {} >= {}", book.symbol(), b.price, a.price));
                }
            }
        }
        Ok(())
    }
}

#[derive(Default)]
struct Batch {
    private: Vec<Outbound>,
    dirty: Vec<TraderId>,
    trades: Vec<(Symbol, Price, u64)>,
    touched: Vec<Symbol>,
}

impl Batch {
    fn dirty(&mut self, trader: &TraderId) {
        if !self.dirty.contains(trader) {
            self.dirty.push(trader.clone());
        }
    }
}
