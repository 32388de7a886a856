//! Brute-force matcher that keeps every resting order in one flat list and
//! rescans it for each matching step, plus a driver that runs random
//! sequences through it and the real book side by side.

use lobsim_core::order_book::{
    Book, CancelQty, DepthSnapshot, ExecutionReport, GlobalQuote, LiquiditySource, Order, RejectReason, ReportKind,
    TopOfBook,
};
use lobsim_core::types::{OrderId, OrderKind, Price, PriceLevel, Side, Symbol, TraderId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const LOW_TICK: u64 = 9_990;
pub const RANGE: u64 = 20;

#[derive(Default)]
struct Oracle {
    resting: Vec<Order>,
    global: Option<GlobalQuote>,
}

fn report(
    kind: ReportKind,
    id: OrderId,
    counter: Option<OrderId>,
    price: Option<Price>,
    size: u64,
    leaves: u64,
    source: LiquiditySource,
    reason: Option<RejectReason>,
) -> ExecutionReport {
    ExecutionReport {
        kind,
        order_id: id,
        counter_order_id: counter,
        trade_price: price,
        trade_size: size,
        leaves,
        exec_time: 0,
        liquidity_source: source,
        reject_reason: reason,
    }
}

fn fill_kind(leaves: u64) -> ReportKind {
    if leaves == 0 {
        ReportKind::Fill
    } else {
        ReportKind::PartialFill
    }
}

/// `a` is strictly better than `b` for someone trading against `side`.
fn better(side: Side, a: Price, b: Price) -> bool {
    match side {
        Side::Buy => a > b,
        Side::Sell => a < b,
    }
}

impl Oracle {
    /// Index of the highest-priority resting order on `side`.
    fn best_index(&self, side: Side) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, o) in self.resting.iter().enumerate() {
            if o.side != side {
                continue;
            }
            best = match best {
                None => Some(i),
                Some(j) => {
                    let (p, q) = (o.limit_price.unwrap(), self.resting[j].limit_price.unwrap());
                    if better(side, p, q) || (p == q && o.arrival_seq < self.resting[j].arrival_seq) {
                        Some(i)
                    } else {
                        Some(j)
                    }
                }
            };
        }
        best
    }

    fn global_on(&self, side: Side) -> Option<(Price, u64)> {
        let q = self.global.as_ref()?;
        let (p, s) = match side {
            Side::Buy => (q.best_bid, q.bid_size),
            Side::Sell => (q.best_ask, q.ask_size),
        };
        (s > 0).then_some((p, s))
    }

    fn take_global(&mut self, side: Side, qty: u64) {
        let q = self.global.as_mut().unwrap();
        match side {
            Side::Buy => q.bid_size -= qty,
            Side::Sell => q.ask_size -= qty,
        }
    }

    fn submit(&mut self, mut order: Order) -> Vec<ExecutionReport> {
        let mut out = Vec::new();
        let opp = order.side.opposite();
        if order.kind == OrderKind::Market && self.best_index(opp).is_none() && self.global_on(opp).is_none() {
            out.push(report(
                ReportKind::Rejected,
                order.order_id,
                None,
                None,
                0,
                0,
                LiquiditySource::Local,
                Some(RejectReason::NoLiquidity),
            ));
            return out;
        }
        while order.remaining > 0 {
            let local = self.best_index(opp);
            let global = self.global_on(opp);
            let use_global = match (local, global) {
                (None, None) => break,
                (None, Some(_)) => true,
                (Some(_), None) => false,
                (Some(i), Some((g, _))) => better(opp, g, self.resting[i].limit_price.unwrap()),
            };
            let price = if use_global {
                global.unwrap().0
            } else {
                self.resting[local.unwrap()].limit_price.unwrap()
            };
            if let Some(limit) = order.limit_price {
                if better(opp, limit, price) {
                    break;
                }
            }
            if use_global {
                let qty = order.remaining.min(global.unwrap().1);
                self.take_global(opp, qty);
                order.remaining -= qty;
                out.push(report(
                    fill_kind(order.remaining),
                    order.order_id,
                    None,
                    Some(price),
                    qty,
                    order.remaining,
                    LiquiditySource::Global,
                    None,
                ));
            } else {
                let i = local.unwrap();
                let qty = order.remaining.min(self.resting[i].remaining);
                order.remaining -= qty;
                self.resting[i].remaining -= qty;
                let r = &self.resting[i];
                out.push(report(
                    fill_kind(order.remaining),
                    order.order_id,
                    Some(r.order_id),
                    Some(price),
                    qty,
                    order.remaining,
                    LiquiditySource::Local,
                    None,
                ));
                out.push(report(
                    fill_kind(r.remaining),
                    r.order_id,
                    Some(order.order_id),
                    Some(price),
                    qty,
                    r.remaining,
                    LiquiditySource::Local,
                    None,
                ));
                if r.remaining == 0 {
                    self.resting.remove(i);
                }
            }
        }
        if order.remaining > 0 {
            if order.kind == OrderKind::Limit {
                out.push(report(
                    ReportKind::Accepted,
                    order.order_id,
                    None,
                    None,
                    order.remaining,
                    order.remaining,
                    LiquiditySource::Local,
                    None,
                ));
                self.resting.push(order);
            } else {
                out.push(report(
                    ReportKind::Canceled,
                    order.order_id,
                    None,
                    None,
                    order.remaining,
                    0,
                    LiquiditySource::Local,
                    None,
                ));
            }
        }
        out
    }

    fn cancel(&mut self, id: OrderId, qty: CancelQty) -> ExecutionReport {
        let Some(i) = self.resting.iter().position(|o| o.order_id == id) else {
            return report(
                ReportKind::Rejected,
                id,
                None,
                None,
                0,
                0,
                LiquiditySource::Local,
                Some(RejectReason::NotResting),
            );
        };
        let o = &mut self.resting[i];
        let removed = match qty {
            CancelQty::All => o.remaining,
            CancelQty::Shares(n) => n.min(o.remaining),
        };
        o.remaining -= removed;
        let leaves = o.remaining;
        if leaves == 0 {
            self.resting.remove(i);
        }
        report(ReportKind::Canceled, id, None, None, removed, leaves, LiquiditySource::Local, None)
    }

    fn set_global(&mut self, quote: GlobalQuote) -> Vec<ExecutionReport> {
        self.global = Some(quote);
        let mut out = Vec::new();
        for side in [Side::Buy, Side::Sell] {
            while let (Some(i), Some((g, avail))) = (self.best_index(side), self.global_on(side.opposite())) {
                if better(side, g, self.resting[i].limit_price.unwrap()) {
                    break;
                }
                let qty = avail.min(self.resting[i].remaining);
                self.take_global(side.opposite(), qty);
                let r = &mut self.resting[i];
                r.remaining -= qty;
                out.push(report(
                    fill_kind(r.remaining),
                    r.order_id,
                    None,
                    Some(g),
                    qty,
                    r.remaining,
                    LiquiditySource::Global,
                    None,
                ));
                if r.remaining == 0 {
                    self.resting.remove(i);
                }
            }
        }
        out
    }

    fn levels(&self, side: Side) -> Vec<PriceLevel> {
        let mut prices: Vec<Price> = self
            .resting
            .iter()
            .filter(|o| o.side == side)
            .map(|o| o.limit_price.unwrap())
            .collect();
        prices.sort();
        prices.dedup();
        if side == Side::Buy {
            prices.reverse();
        }
        prices
            .into_iter()
            .map(|p| {
                let size = self
                    .resting
                    .iter()
                    .filter(|o| o.side == side && o.limit_price == Some(p))
                    .map(|o| o.remaining)
                    .sum();
                PriceLevel::new(p, size)
            })
            .collect()
    }

    fn depth(&self) -> DepthSnapshot {
        DepthSnapshot {
            bids: self.levels(Side::Buy),
            asks: self.levels(Side::Sell),
        }
    }

    fn combined(&self) -> TopOfBook {
        let side_best = |side: Side| {
            let local = self.levels(side).first().copied();
            let global = self.global_on(side).map(|(p, s)| PriceLevel::new(p, s));
            match (local, global) {
                (None, x) | (x, None) => x,
                (Some(l), Some(g)) if l.price == g.price => Some(PriceLevel::new(l.price, l.size + g.size)),
                (Some(l), Some(g)) => Some(if better(side, l.price, g.price) { l } else { g }),
            }
        };
        TopOfBook {
            bid: side_best(Side::Buy),
            ask: side_best(Side::Sell),
        }
    }
}

fn strip_time(mut reports: Vec<ExecutionReport>) -> Vec<ExecutionReport> {
    for r in &mut reports {
        r.exec_time = 0;
    }
    reports
}

fn random_quote(rng: &mut ChaCha8Rng, symbol: &Symbol) -> GlobalQuote {
    let bid = LOW_TICK + rng.random_range(0..RANGE - 1);
    let ask = bid + rng.random_range(1..=(LOW_TICK + RANGE - bid).max(1));
    GlobalQuote {
        symbol: symbol.clone(),
        best_bid: Price(bid),
        bid_size: rng.random_range(0..=300),
        best_ask: Price(ask),
        ask_size: rng.random_range(0..=300),
        source_time: 0,
    }
}

/// Runs one seeded sequence of `ops` operations through both books.
pub fn run_sequence(seed: u64, ops: usize, with_global: bool) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let symbol = Symbol::from("CS1");
    let mut book = Book::new(symbol.clone());
    let mut oracle = Oracle::default();
    let mut next_id = 1u64;
    let mut reports = 0;
    for step in 0..ops {
        let roll: f64 = rng.random();
        let (got, want) = if roll < 0.15 && next_id > 1 {
            let id = OrderId(rng.random_range(1..next_id));
            let qty = if rng.random_bool(0.5) {
                CancelQty::All
            } else {
                CancelQty::Shares(rng.random_range(1..=200))
            };
            (vec![book.cancel(id, qty, step as u64)], vec![oracle.cancel(id, qty)])
        } else if with_global && roll < 0.22 {
            let q = random_quote(&mut rng, &symbol);
            (book.set_global_quote(q.clone(), step as u64), oracle.set_global(q))
        } else {
            let side = if rng.random_bool(0.5) { Side::Buy } else { Side::Sell };
            let size = rng.random_range(1..=500);
            let id = OrderId(next_id);
            next_id += 1;
            let trader = TraderId::new(format!("t{}", rng.random_range(0..8)));
            let order = if roll < 0.30 {
                Order::market(id, trader, symbol.clone(), side, size, step as u64, step as u64)
            } else {
                let price = Price(LOW_TICK + rng.random_range(0..RANGE));
                Order::limit(id, trader, symbol.clone(), side, price, size, step as u64, step as u64)
            };
            (book.submit(order.clone(), step as u64), oracle.submit(order))
        };
        let got = strip_time(got);
        if got != want {
            return Err(format!("seed {seed} step {step}: report streams differ\n got {got:?}\nwant {want:?}"));
        }
        reports += got.len();
        if book.full_depth() != oracle.depth() {
            return Err(format!("seed {seed} step {step}: depth differs"));
        }
        if book.best_prices().combined != oracle.combined() {
            return Err(format!("seed {seed} step {step}: combined best differs"));
        }
    }
    Ok(reports)
}

