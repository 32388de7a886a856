//! Per-symbol limit order book with price-time priority matching.
//!
//! A [`Book`] holds the local ladders (orders from connected clients) and, in
//! replay mode, the global quote that stands in for outside liquidity. Each
//! matching step fills against whichever of the two offers the better price;
//! equal prices go to the local book. Local crosses execute at the resting
//! order's price, global fills at the quote price.
//!
//! The book is single-writer: the exchange applies every mutation in arrival
//! order from one executor. It is `Send` so it can be moved to that executor.

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::types::{OrderId, OrderKind, Price, PriceLevel, Side, Symbol, Timestamp, TraderId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Order {
    pub order_id: OrderId,
    pub trader_id: TraderId,
    pub symbol: Symbol,
    pub side: Side,
    pub kind: OrderKind,
    /// Required for limit orders, absent for market orders.
    pub limit_price: Option<Price>,
    /// Worst price a market order may trade at. The brokerage sets this as a
    /// collar on market buys so the cash reservation always covers the fill.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protection: Option<Price>,
    pub size: u64,
    pub remaining: u64,
    pub arrival_seq: u64,
    pub arrival_time: Timestamp,
}

impl Order {
    #[allow(clippy::too_many_arguments)]
    pub fn limit(
        order_id: OrderId,
        trader_id: TraderId,
        symbol: Symbol,
        side: Side,
        price: Price,
        size: u64,
        arrival_seq: u64,
        arrival_time: Timestamp,
    ) -> Order {
        Order {
            order_id,
            trader_id,
            symbol,
            side,
            kind: OrderKind::Limit,
            limit_price: Some(price),
            protection: None,
            size,
            remaining: size,
            arrival_seq,
            arrival_time,
        }
    }

    pub fn market(
        order_id: OrderId,
        trader_id: TraderId,
        symbol: Symbol,
        side: Side,
        size: u64,
        arrival_seq: u64,
        arrival_time: Timestamp,
    ) -> Order {
        Order {
            order_id,
            trader_id,
            symbol,
            side,
            kind: OrderKind::Market,
            limit_price: None,
            protection: None,
            size,
            remaining: size,
            arrival_seq,
            arrival_time,
        }
    }

    /// Highest (buy) or lowest (sell) acceptable execution price, if bounded.
    fn price_bound(&self) -> Option<Price> {
        match self.kind {
            OrderKind::Limit => self.limit_price,
            OrderKind::Market => self.protection,
        }
    }
}

/// Best bid and offer from outside venues (the replayed NBBO).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalQuote {
    pub symbol: Symbol,
    pub best_bid: Price,
    pub bid_size: u64,
    pub best_ask: Price,
    pub ask_size: u64,
    pub source_time: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReportKind {
    Accepted,
    PartialFill,
    Fill,
    Canceled,
    Rejected,
}

impl ReportKind {
    pub fn is_fill(self) -> bool {
        matches!(self, ReportKind::Fill | ReportKind::PartialFill)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum LiquiditySource {
    Local,
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RejectReason {
    /// Market order with no opposing liquidity anywhere.
    NoLiquidity,
    /// Cancel for an order that is not resting (filled, canceled or unknown).
    NotResting,
    Malformed,
}

/// One book event tied to a single order.
///
/// For `FILL`/`PARTIAL_FILL`, `trade_size` is the executed quantity. For
/// `CANCELED` it is the quantity removed, for `ACCEPTED` the quantity left
/// resting. `leaves` is the order's remaining quantity after the event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub kind: ReportKind,
    pub order_id: OrderId,
    pub counter_order_id: Option<OrderId>,
    pub trade_price: Option<Price>,
    pub trade_size: u64,
    pub leaves: u64,
    pub exec_time: Timestamp,
    pub liquidity_source: LiquiditySource,
    pub reject_reason: Option<RejectReason>,
}

impl ExecutionReport {
    fn event(kind: ReportKind, order_id: OrderId, size: u64, leaves: u64, now: Timestamp) -> Self {
        ExecutionReport {
            kind,
            order_id,
            counter_order_id: None,
            trade_price: None,
            trade_size: size,
            leaves,
            exec_time: now,
            liquidity_source: LiquiditySource::Local,
            reject_reason: None,
        }
    }

    fn rejected(order_id: OrderId, reason: RejectReason, leaves: u64, now: Timestamp) -> Self {
        ExecutionReport {
            reject_reason: Some(reason),
            ..Self::event(ReportKind::Rejected, order_id, 0, leaves, now)
        }
    }

    fn fill(
        order_id: OrderId,
        counter: Option<OrderId>,
        price: Price,
        size: u64,
        leaves: u64,
        source: LiquiditySource,
        now: Timestamp,
    ) -> Self {
        ExecutionReport {
            kind: if leaves == 0 {
                ReportKind::Fill
            } else {
                ReportKind::PartialFill
            },
            order_id,
            counter_order_id: counter,
            trade_price: Some(price),
            trade_size: size,
            leaves,
            exec_time: now,
            liquidity_source: source,
            reject_reason: None,
        }
    }
}

/// How much of a resting order to cancel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CancelQty {
    All,
    Shares(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TopOfBook {
    pub bid: Option<PriceLevel>,
    pub ask: Option<PriceLevel>,
}

impl TopOfBook {
    pub fn spread(&self) -> Option<u64> {
        match (self.bid, self.ask) {
            (Some(b), Some(a)) if a.price > b.price => Some(a.price.0 - b.price.0),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BestPrices {
    pub local: TopOfBook,
    pub global: TopOfBook,
    pub combined: TopOfBook,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DepthSnapshot {
    /// Best (highest) bid first.
    pub bids: Vec<PriceLevel>,
    /// Best (lowest) ask first.
    pub asks: Vec<PriceLevel>,
}

#[derive(Debug, Clone, Default)]
struct Level {
    orders: VecDeque<Order>,
    total: u64,
}

#[derive(Debug, Clone)]
pub struct Book {
    symbol: Symbol,
    bids: BTreeMap<Price, Level>,
    asks: BTreeMap<Price, Level>,
    index: HashMap<OrderId, (Side, Price)>,
    global: Option<GlobalQuote>,
    last_trade_price: Option<Price>,
}

impl Book {
    pub fn new(symbol: Symbol) -> Book {
        Book {
            symbol,
            bids: BTreeMap::new(),
            asks: BTreeMap::new(),
            index: HashMap::new(),
            global: None,
            last_trade_price: None,
        }
    }

    pub fn symbol(&self) -> &Symbol {
        &self.symbol
    }

    pub fn last_trade_price(&self) -> Option<Price> {
        self.last_trade_price
    }

    pub fn global_quote(&self) -> Option<&GlobalQuote> {
        self.global.as_ref()
    }

    /// Number of resting local orders.
    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn order(&self, order_id: OrderId) -> Option<&Order> {
        let (side, price) = self.index.get(&order_id)?;
        self.ladder(*side)
            .get(price)?
            .orders
            .iter()
            .find(|o| o.order_id == order_id)
    }

    /// All resting orders, bids best-first then asks best-first, FIFO within a level.
    pub fn resting_orders(&self) -> impl Iterator<Item = &Order> {
        self.bids
            .values()
            .rev()
            .chain(self.asks.values())
            .flat_map(|level| level.orders.iter())
    }

    fn ladder(&self, side: Side) -> &BTreeMap<Price, Level> {
        match side {
            Side::Buy => &self.bids,
            Side::Sell => &self.asks,
        }
    }

    fn ladder_mut(&mut self, side: Side) -> &mut BTreeMap<Price, Level> {
        match side {
            Side::Buy => &mut self.bids,
            Side::Sell => &mut self.asks,
        }
    }

    fn best_local(&self, side: Side) -> Option<Price> {
        match side {
            Side::Buy => self.bids.last_key_value().map(|(p, _)| *p),
            Side::Sell => self.asks.first_key_value().map(|(p, _)| *p),
        }
    }

    /// Global price on `side` if it still has size.
    fn best_global(&self, side: Side) -> Option<Price> {
        let q = self.global.as_ref()?;
        match side {
            Side::Buy if q.bid_size > 0 => Some(q.best_bid),
            Side::Sell if q.ask_size > 0 => Some(q.best_ask),
            _ => None,
        }
    }

    /// Match an incoming order, then rest or cancel any remainder.
    pub fn submit(&mut self, mut order: Order, now: Timestamp) -> Vec<ExecutionReport> {
        let mut reports = Vec::new();
        if order.size == 0 || order.remaining != order.size {
            reports.push(ExecutionReport::rejected(
                order.order_id,
                RejectReason::Malformed,
                0,
                now,
            ));
            return reports;
        }
        match order.kind {
            OrderKind::Limit if order.limit_price.is_none_or(|p| p.0 == 0) => {
                reports.push(ExecutionReport::rejected(
                    order.order_id,
                    RejectReason::Malformed,
                    0,
                    now,
                ));
                return reports;
            }
            OrderKind::Market => {
                let opposing = order.side.opposite();
                if self.best_local(opposing).is_none() && self.best_global(opposing).is_none() {
                    reports.push(ExecutionReport::rejected(
                        order.order_id,
                        RejectReason::NoLiquidity,
                        0,
                        now,
                    ));
                    return reports;
                }
            }
            OrderKind::Limit => {}
        }

        self.match_incoming(&mut order, now, &mut reports);

        if order.remaining > 0 {
            match order.kind {
                OrderKind::Limit => {
                    reports.push(ExecutionReport::event(
                        ReportKind::Accepted,
                        order.order_id,
                        order.remaining,
                        order.remaining,
                        now,
                    ));
                    self.rest(order);
                }
                OrderKind::Market => {
                    reports.push(ExecutionReport::event(
                        ReportKind::Canceled,
                        order.order_id,
                        order.remaining,
                        0,
                        now,
                    ));
                }
            }
        }
        reports
    }

    fn match_incoming(&mut self, order: &mut Order, now: Timestamp, out: &mut Vec<ExecutionReport>) {
        let opposing = order.side.opposite();
        let bound = order.price_bound();
        while order.remaining > 0 {
            let local = self.best_local(opposing);
            let global = self.best_global(opposing);
            let (price, source) = match (local, global) {
                (None, None) => break,
                (Some(l), None) => (l, LiquiditySource::Local),
                (None, Some(g)) => (g, LiquiditySource::Global),
                (Some(l), Some(g)) => {
                    let global_better = match order.side {
                        Side::Buy => g < l,
                        Side::Sell => g > l,
                    };
                    if global_better {
                        (g, LiquiditySource::Global)
                    } else {
                        (l, LiquiditySource::Local)
                    }
                }
            };
            if let Some(bound) = bound {
                let acceptable = match order.side {
                    Side::Buy => price <= bound,
                    Side::Sell => price >= bound,
                };
                if !acceptable {
                    break;
                }
            }
            match source {
                LiquiditySource::Local => self.fill_local_front(order, opposing, price, now, out),
                LiquiditySource::Global => self.fill_global(order, price, now, out),
            }
            self.last_trade_price = Some(price);
        }
    }

    fn fill_local_front(
        &mut self,
        order: &mut Order,
        resting_side: Side,
        price: Price,
        now: Timestamp,
        out: &mut Vec<ExecutionReport>,
    ) {
        let ladder = self.ladder_mut(resting_side);
        let level = ladder.get_mut(&price).expect("best level exists");
        let front = level.orders.front_mut().expect("levels are never empty");
        let qty = order.remaining.min(front.remaining);
        front.remaining -= qty;
        order.remaining -= qty;
        level.total -= qty;

        out.push(ExecutionReport::fill(
            order.order_id,
            Some(front.order_id),
            price,
            qty,
            order.remaining,
            LiquiditySource::Local,
            now,
        ));
        out.push(ExecutionReport::fill(
            front.order_id,
            Some(order.order_id),
            price,
            qty,
            front.remaining,
            LiquiditySource::Local,
            now,
        ));

        if front.remaining == 0 {
            let done = level.orders.pop_front().expect("front exists");
            if level.orders.is_empty() {
                ladder.remove(&price);
            }
            self.index.remove(&done.order_id);
        }
    }

    fn fill_global(
        &mut self,
        order: &mut Order,
        price: Price,
        now: Timestamp,
        out: &mut Vec<ExecutionReport>,
    ) {
        let quote = self.global.as_mut().expect("global side has size");
        let available = match order.side {
            Side::Buy => &mut quote.ask_size,
            Side::Sell => &mut quote.bid_size,
        };
        let qty = order.remaining.min(*available);
        *available -= qty;
        order.remaining -= qty;
        out.push(ExecutionReport::fill(
            order.order_id,
            None,
            price,
            qty,
            order.remaining,
            LiquiditySource::Global,
            now,
        ));
    }

    fn rest(&mut self, order: Order) {
        let price = order.limit_price.expect("only limit orders rest");
        self.index.insert(order.order_id, (order.side, price));
        let level = self.ladder_mut(order.side).entry(price).or_default();
        level.total += order.remaining;
        level.orders.push_back(order);
    }

    /// Reduce a resting order by `qty` (or remove it entirely). Partial
    /// cancels keep the order's queue position.
    pub fn cancel(&mut self, order_id: OrderId, qty: CancelQty, now: Timestamp) -> ExecutionReport {
        if qty == CancelQty::Shares(0) {
            return ExecutionReport::rejected(order_id, RejectReason::Malformed, 0, now);
        }
        let Some(&(side, price)) = self.index.get(&order_id) else {
            return ExecutionReport::rejected(order_id, RejectReason::NotResting, 0, now);
        };
        let ladder = self.ladder_mut(side);
        let level = ladder.get_mut(&price).expect("indexed level exists");
        let pos = level
            .orders
            .iter()
            .position(|o| o.order_id == order_id)
            .expect("indexed order exists");
        let resting = &mut level.orders[pos];
        let removed = match qty {
            CancelQty::All => resting.remaining,
            CancelQty::Shares(n) => n.min(resting.remaining),
        };
        resting.remaining -= removed;
        level.total -= removed;
        let leaves = resting.remaining;
        if leaves == 0 {
            level.orders.remove(pos);
            if level.orders.is_empty() {
                ladder.remove(&price);
            }
            self.index.remove(&order_id);
        }
        ExecutionReport::event(ReportKind::Canceled, order_id, removed, leaves, now)
    }

    /// Install a new global quote. Any resting local order that crosses it
    /// trades against the quote at the quote's price, in price-time priority,
    /// consuming the quote's size.
    pub fn set_global_quote(&mut self, quote: GlobalQuote, now: Timestamp) -> Vec<ExecutionReport> {
        self.global = Some(quote);
        let mut out = Vec::new();
        for resting_side in [Side::Buy, Side::Sell] {
            loop {
                let Some(local) = self.best_local(resting_side) else {
                    break;
                };
                let Some(global) = self.best_global(resting_side.opposite()) else {
                    break;
                };
                let crosses = match resting_side {
                    Side::Buy => local >= global,
                    Side::Sell => local <= global,
                };
                if !crosses {
                    break;
                }
                self.sweep_front_against_global(resting_side, local, global, now, &mut out);
                self.last_trade_price = Some(global);
            }
        }
        out
    }

    fn sweep_front_against_global(
        &mut self,
        resting_side: Side,
        level_price: Price,
        quote_price: Price,
        now: Timestamp,
        out: &mut Vec<ExecutionReport>,
    ) {
        let quote = self.global.as_mut().expect("quote installed");
        let available = match resting_side {
            Side::Buy => &mut quote.ask_size,
            Side::Sell => &mut quote.bid_size,
        };
        let ladder = match resting_side {
            Side::Buy => &mut self.bids,
            Side::Sell => &mut self.asks,
        };
        let level = ladder.get_mut(&level_price).expect("best level exists");
        let front = level.orders.front_mut().expect("levels are never empty");
        let qty = front.remaining.min(*available);
        *available -= qty;
        front.remaining -= qty;
        level.total -= qty;
        out.push(ExecutionReport::fill(
            front.order_id,
            None,
            quote_price,
            qty,
            front.remaining,
            LiquiditySource::Global,
            now,
        ));
        if front.remaining == 0 {
            let done = level.orders.pop_front().expect("front exists");
            if level.orders.is_empty() {
                ladder.remove(&level_price);
            }
            self.index.remove(&done.order_id);
        }
    }

    pub fn clear_global_quote(&mut self) {
        self.global = None;
    }

    /// A print from outside venues: informs the last price, fills nothing.
    pub fn record_external_trade(&mut self, price: Price) {
        self.last_trade_price = Some(price);
    }

    pub fn best_prices(&self) -> BestPrices {
        let local = TopOfBook {
            bid: self
                .bids
                .last_key_value()
                .map(|(p, l)| PriceLevel::new(*p, l.total)),
            ask: self
                .asks
                .first_key_value()
                .map(|(p, l)| PriceLevel::new(*p, l.total)),
        };
        let global = match &self.global {
            Some(q) => TopOfBook {
                bid: (q.bid_size > 0).then(|| PriceLevel::new(q.best_bid, q.bid_size)),
                ask: (q.ask_size > 0).then(|| PriceLevel::new(q.best_ask, q.ask_size)),
            },
            None => TopOfBook::default(),
        };
        let combined = TopOfBook {
            bid: tighter(local.bid, global.bid, Side::Buy),
            ask: tighter(local.ask, global.ask, Side::Sell),
        };
        BestPrices {
            local,
            global,
            combined,
        }
    }

    /// Top `n_levels` aggregated local levels per side.
    pub fn depth_snapshot(&self, n_levels: usize) -> DepthSnapshot {
        assert!(n_levels >= 1, "depth snapshot needs at least one level");
        DepthSnapshot {
            bids: self
                .bids
                .iter()
                .rev()
                .take(n_levels)
                .map(|(p, l)| PriceLevel::new(*p, l.total))
                .collect(),
            asks: self
                .asks
                .iter()
                .take(n_levels)
                .map(|(p, l)| PriceLevel::new(*p, l.total))
                .collect(),
        }
    }

    /// Full local depth (every level).
    pub fn full_depth(&self) -> DepthSnapshot {
        self.depth_snapshot(usize::MAX)
    }
}

/// Better of two levels for one side; equal prices aggregate their sizes.
fn tighter(a: Option<PriceLevel>, b: Option<PriceLevel>, side: Side) -> Option<PriceLevel> {
    match (a, b) {
        (None, x) | (x, None) => x,
        (Some(a), Some(b)) if a.price == b.price => Some(PriceLevel::new(a.price, a.size + b.size)),
        (Some(a), Some(b)) => {
            let a_better = match side {
                Side::Buy => a.price > b.price,
                Side::Sell => a.price < b.price,
            };
            Some(if a_better { a } else { b })
        }
    }
}
