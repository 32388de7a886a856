use lobsim_core::exchange::{Ack, CancelRequest, NewOrderRequest, OrderReport, Portfolio};
use lobsim_core::order_book::ReportKind;
use lobsim_core::types::{Cash, OrderKind, Price, Side, Symbol, Timestamp, TraderId, MICROS_PER_SECOND};
use rand::Rng;
use rand_distr::{Distribution, Exp, Normal, Uniform};
use serde::{Deserialize, Serialize};

/// Arrival times of one trader over a session of `session_seconds`: a
/// Poisson process with `lambda` expected events per session.
pub fn schedule<R: Rng + ?Sized>(lambda: f64, session_seconds: f64, rng: &mut R) -> Vec<Timestamp> {
    if session_seconds <= 0.0 || lambda <= 0.0 {
        return Vec::new();
    }
    let gaps = Exp::new(lambda / session_seconds).expect("positive rate");
    let mut times = Vec::new();
    let mut t = 0.0;
    loop {
        t += gaps.sample(rng);
        if t >= session_seconds {
            return times;
        }
        times.push((t * MICROS_PER_SECOND as f64) as Timestamp);
    }
}

/// What an agent can see of the market when it wakes up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MarketView {
    pub best_bid: Option<Price>,
    pub best_ask: Option<Price>,
    pub last_price: Option<Price>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Cancel(CancelRequest),
    Submit(NewOrderRequest),
}

/// One decision, kept for the statistical self-tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub time_us: Timestamp,
    pub trader: TraderId,
    pub side: Side,
    pub anchor: Price,
    pub limit: Price,
    pub size: u64,
    pub canceled_previous: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZiParams {
    pub sigma: f64,
    pub r_low: f64,
    pub r_high: f64,
    pub p0: Price,
    /// Per-share fee, to mirror the cash reserved by a resting buy.
    pub fee_per_share: Cash,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Outstanding {
    client_order_id: u64,
    side: Side,
    limit: Price,
    remaining: u64,
}

/// A zero-intelligence trader: cancel whatever is resting, flip a coin,
/// quote around the best price on its side.
#[derive(Debug, Clone)]
pub struct ZiAgent {
    pub trader: TraderId,
    symbol: Symbol,
    params: ZiParams,
    buying_power: Cash,
    shares: u64,
    outstanding: Option<Outstanding>,
    next_client_order_id: u64,
}

impl ZiAgent {
    pub fn new(trader: TraderId, symbol: Symbol, params: ZiParams, cash: Cash, shares: u64) -> ZiAgent {
        ZiAgent {
            trader,
            symbol,
            params,
            buying_power: cash,
            shares,
            outstanding: None,
            next_client_order_id: 1,
        }
    }

    pub fn buying_power(&self) -> Cash {
        self.buying_power
    }

    pub fn shares(&self) -> u64 {
        self.shares
    }

    pub fn outstanding_order(&self) -> Option<u64> {
        self.outstanding.map(|o| o.client_order_id)
    }

    /// Cash the outstanding order holds in reserve; it comes back on cancel.
    fn outstanding_reservation(&self) -> Cash {
        match self.outstanding {
            Some(o) if o.side == Side::Buy => (o.limit.notional(1) + self.params.fee_per_share).times(o.remaining),
            _ => Cash::ZERO,
        }
    }

    fn draw_price<R: Rng + ?Sized>(&self, anchor: Price, rng: &mut R) -> Price {
        let normal = Normal::new(anchor.dollars(), self.params.sigma).expect("sigma is positive");
        loop {
            let p = Price::from_dollars(normal.sample(rng));
            if p.0 > 0 {
                return p;
            }
        }
    }

    /// Handle one scheduled wake-up.
    pub fn act<R: Rng + ?Sized>(&mut self, now: Timestamp, view: &MarketView, rng: &mut R) -> (Vec<Action>, ActionRecord) {
        let mut actions = Vec::with_capacity(2);
        let spendable = self.buying_power + self.outstanding_reservation();
        let canceled_previous = self.outstanding.is_some();
        if let Some(o) = self.outstanding.take() {
            actions.push(Action::Cancel(CancelRequest {
                client_order_id: o.client_order_id,
                qty: None,
            }));
        }

        let side = if rng.random_bool(0.5) { Side::Buy } else { Side::Sell };
        let p0 = self.params.p0;
        let anchor = match side {
            Side::Buy => match (view.best_bid, view.last_price) {
                (Some(b), Some(l)) => b.min(l),
                (Some(x), None) | (None, Some(x)) => x,
                (None, None) => p0,
            },
            Side::Sell => match (view.best_ask, view.last_price) {
                (Some(a), Some(l)) => a.max(l),
                (Some(x), None) | (None, Some(x)) => x,
                (None, None) => p0,
            },
        };
        let limit = self.draw_price(anchor, rng);
        let r = Uniform::new(self.params.r_low, self.params.r_high)
            .expect("r_low < r_high")
            .sample(rng);
        let size = match side {
            Side::Buy => (r * spendable.units().max(0) as f64 / limit.notional(1).units() as f64).floor() as u64,
            Side::Sell => (r * self.shares as f64).floor() as u64,
        };
        if size > 0 {
            let cid = self.next_client_order_id;
            self.next_client_order_id += 1;
            actions.push(Action::Submit(NewOrderRequest {
                client_order_id: cid,
                symbol: self.symbol.clone(),
                side,
                kind: OrderKind::Limit,
                size,
                limit_price: Some(limit),
            }));
            self.outstanding = Some(Outstanding {
                client_order_id: cid,
                side,
                limit,
                remaining: size,
            });
        }
        let record = ActionRecord {
            time_us: now,
            trader: self.trader.clone(),
            side,
            anchor,
            limit,
            size,
            canceled_previous,
        };
        (actions, record)
    }

    pub fn on_ack(&mut self, ack: &Ack) {
        if ack.error.is_some() && self.outstanding.is_some_and(|o| o.client_order_id == ack.client_order_id) {
            self.outstanding = None;
        }
    }

    pub fn on_report(&mut self, report: &OrderReport) {
        let Some(o) = self.outstanding.as_mut() else {
            return;
        };
        if o.client_order_id != report.client_order_id {
            return;
        }
        match report.report.kind {
            ReportKind::Accepted => {}
            ReportKind::PartialFill | ReportKind::Fill => o.remaining = report.report.leaves,
            ReportKind::Canceled | ReportKind::Rejected => o.remaining = report.report.leaves,
        }
        if o.remaining == 0 {
            self.outstanding = None;
        }
    }

    pub fn on_portfolio(&mut self, portfolio: &Portfolio) {
        self.buying_power = portfolio.buying_power;
        self.shares = portfolio.shares(&self.symbol);
    }
}
