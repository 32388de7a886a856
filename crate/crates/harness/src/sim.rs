//! Accelerated mode: exchange and traders in one process, driven by a
//! discrete-event loop on a virtual clock.
//!
//! Every client message still travels through a per-session FIFO queue with
//! a delay and is sequenced by [`Exchange::ingest`] in arrival order, exactly
//! as in live mode. Only the clock is virtual.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use lobsim_agents::{endow, schedule, stress_plan, Action, ActionRecord, MarketView, ZiAgent, ZiParams};
use lobsim_core::exchange::{Ack, Exchange, ExchangeConfig, NewOrderRequest, OrderReport, Outbound, Portfolio, Request};
use lobsim_core::order_book::DepthSnapshot;
use lobsim_core::persist::{TradeRecord, TradeSink};
use lobsim_core::clock::ScaledClock;
use lobsim_core::replay::{ReplayCursor, ReplayEvent};
use lobsim_core::types::{Cash, OrderKind, Price, Side, Symbol, Timestamp, TraderId, MICROS_PER_SECOND};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::config::{LatencyConfig, SimConfig};

/// Best prices and last trade at one grid point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub time_us: Timestamp,
    pub best_bid: Option<Price>,
    pub bid_size: u64,
    pub best_ask: Option<Price>,
    pub ask_size: u64,
    pub last_price: Option<Price>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCounters {
    pub wakeups: u64,
    pub orders: u64,
    pub cancels: u64,
    pub rejected_orders: u64,
    pub trades: u64,
    pub stress_orders: u64,
    pub replay_events: u64,
    /// Client messages and replay events processed by the exchange.
    pub exchange_events: u64,
}

/// Everything a run produces, captured server-side.
#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub trades: Vec<TradeRecord>,
    /// Every trade print: (time, price).
    pub last_prices: Vec<(Timestamp, Price)>,
    pub samples: Vec<Sample>,
    pub depth: Vec<(Timestamp, DepthSnapshot)>,
    pub actions: Vec<ActionRecord>,
    pub counters: RunCounters,
    pub warnings: Vec<String>,
    pub wall_seconds: f64,
    /// Stress trigger in simulation time, if a stress event was scheduled.
    pub trigger_us: Option<Timestamp>,
}

#[derive(Clone, Default)]
struct Tape(Arc<Mutex<Vec<TradeRecord>>>);

impl TradeSink for Tape {
    fn append(&mut self, record: &TradeRecord) -> std::io::Result<()> {
        self.0.lock().expect("tape lock").push(record.clone());
        Ok(())
    }
}

enum ToClient {
    Ack(Ack),
    Report(OrderReport),
    Portfolio(Portfolio),
}

enum Event {
    Wake(usize),
    Arrive(usize, Request),
    Deliver(usize, ToClient),
    Publish(MarketView),
    Stress(usize),
    Replay(ReplayEvent),
}

struct Queue {
    heap: BinaryHeap<Reverse<(Timestamp, u64)>>,
    events: HashMap<u64, Event>,
    next: u64,
}

impl Queue {
    fn push(&mut self, time: Timestamp, event: Event) {
        let id = self.next;
        self.next += 1;
        self.heap.push(Reverse((time, id)));
        self.events.insert(id, event);
    }

    fn pop(&mut self) -> Option<(Timestamp, Event)> {
        let Reverse((time, id)) = self.heap.pop()?;
        Some((time, self.events.remove(&id).expect("queued event")))
    }
}

/// Derive an independent RNG stream from the run seed.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAM_ENDOW: u64 = 1;
const STREAM_SCHEDULE: u64 = 2;
const STREAM_LATENCY: u64 = 3;
const STREAM_AGENT_BASE: u64 = 1_000;

/// Run one accelerated session. Replay events, when configured, are
/// loaded from the file named in the config.
pub fn run(cfg: &SimConfig) -> anyhow::Result<RunOutput> {
    let replay = match &cfg.replay {
        Some(r) => lobsim_core::replay::load_path(&r.file)
            .map_err(|e| anyhow::anyhow!("replay file {}: {e}", r.file.display()))?,
        None => Vec::new(),
    };
    run_with_replay(cfg, replay)
}

/// Like [`run`], with the replay events supplied directly. Events for other
/// symbols are ignored; the first remaining event is anchored at time 0.
pub fn run_with_replay(cfg: &SimConfig, replay: Vec<ReplayEvent>) -> anyhow::Result<RunOutput> {
    run_inner(cfg, replay, false)
}

/// Like [`run_with_replay`], checking every conservation invariant after
/// each exchange event. Fails at the first violation.
pub fn run_audited(cfg: &SimConfig, replay: Vec<ReplayEvent>) -> anyhow::Result<RunOutput> {
    run_inner(cfg, replay, true)
}

fn run_inner(cfg: &SimConfig, replay: Vec<ReplayEvent>, audit: bool) -> anyhow::Result<RunOutput> {
    cfg.validate()?;
    let started = Instant::now();
    let a = &cfg.agents;
    let symbol = cfg.exchange.symbol.clone();
    let fee = cfg.exchange.fee();
    let session_end = (a.session_seconds * MICROS_PER_SECOND as f64) as Timestamp;

    let tape = Tape::default();
    let mut ex = Exchange::with_sink(ExchangeConfig::single(symbol.as_str(), a.p0, fee), Box::new(tape.clone()));

    let endowment = endow(a.n, a.alpha, a.total_shares, a.p0, &mut stream(a.seed, STREAM_ENDOW));
    let params = ZiParams {
        sigma: a.sigma,
        r_low: a.r_low,
        r_high: a.r_high,
        p0: a.p0,
        fee_per_share: fee,
    };
    let mut agents = Vec::with_capacity(a.n);
    let mut agent_rngs = Vec::with_capacity(a.n);
    let mut traders: Vec<TraderId> = Vec::new();
    for i in 0..a.n {
        let id = TraderId::new(format!("zi{i:04}"));
        ex.open_account(id.clone(), endowment.cash[i], &[(symbol.clone(), endowment.shares[i])])?;
        agents.push(ZiAgent::new(id.clone(), symbol.clone(), params, endowment.cash[i], endowment.shares[i]));
        agent_rngs.push(stream(a.seed, STREAM_AGENT_BASE + i as u64));
        traders.push(id);
    }

    let mut out = RunOutput::default();
    let plan = cfg.stress.as_ref().map(|s| stress_plan(s, a.total_shares, a.session_seconds));
    if let Some(plan) = &plan {
        for (j, &shares) in plan.endowments.iter().enumerate() {
            let id = TraderId::new(format!("stress{j:02}"));
            ex.open_account(id.clone(), Cash::ZERO, &[(symbol.clone(), shares)])?;
            traders.push(id);
        }
        if let Some(w) = &plan.warning {
            tracing::warn!("{w}");
            out.warnings.push(w.clone());
        }
        out.trigger_us = plan.orders.first().map(|o| o.time);
    }
    let session_of: HashMap<TraderId, usize> = traders.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();

    let mut q = Queue {
        heap: BinaryHeap::new(),
        events: HashMap::new(),
        next: 0,
    };
    let mut sched_rng = stream(a.seed, STREAM_SCHEDULE);
    for i in 0..a.n {
        for t in schedule(a.lambda, a.session_seconds, &mut sched_rng) {
            q.push(t, Event::Wake(i));
        }
    }
    if let Some(plan) = &plan {
        for (k, o) in plan.orders.iter().enumerate() {
            if o.time < session_end {
                q.push(o.time, Event::Stress(k));
            }
        }
    }
    let mut cursor = ReplayCursor::for_symbol(&replay, &symbol, 0);
    while let Some((t, ev)) = cursor.pop_due(Timestamp::MAX) {
        if t < session_end {
            q.push(t, Event::Replay(ev));
        }
    }

    let mut net = Network {
        lat: cfg.latency,
        rng: stream(a.seed, STREAM_LATENCY),
        jitter: (cfg.latency.jitter_us > 0).then(|| Exp::new(1.0 / cfg.latency.jitter_us as f64).expect("positive mean")),
        last_arrival: vec![0; traders.len()],
        last_delivery: vec![0; traders.len()],
        agents: a.n,
        published: MarketView::default(),
    };

    let mut view = MarketView::default();
    let mut next_sample: Timestamp = 0;
    let depth_levels = cfg.exchange.depth_levels;
    let sample_every = cfg.sample_interval_us;
    let depth_every = cfg.depth_interval_us;

    let take_sample = |ex: &Exchange, t: Timestamp, out: &mut RunOutput| {
        let book = ex.book(&symbol).expect("configured symbol");
        let best = book.best_prices().combined;
        out.samples.push(Sample {
            time_us: t,
            best_bid: best.bid.map(|l| l.price),
            bid_size: best.bid.map_or(0, |l| l.size),
            best_ask: best.ask.map(|l| l.price),
            ask_size: best.ask.map_or(0, |l| l.size),
            last_price: book.last_trade_price(),
        });
        if t % depth_every == 0 {
            out.depth.push((t, book.depth_snapshot(depth_levels)));
        }
    };

    let pace = cfg.time_scale.map(ScaledClock::new);
    while let Some((now, event)) = q.pop() {
        if now >= session_end {
            break;
        }
        if let Some(clock) = &pace {
            std::thread::sleep(clock.wall_delay_until(now));
        }
        while next_sample < now {
            take_sample(&ex, next_sample, &mut out);
            next_sample += sample_every;
        }
        match event {
            Event::Wake(i) => {
                out.counters.wakeups += 1;
                let (actions, record) = agents[i].act(now, &view, &mut agent_rngs[i]);
                out.actions.push(record);
                for action in actions {
                    let req = match action {
                        Action::Cancel(c) => {
                            out.counters.cancels += 1;
                            Request::Cancel(c)
                        }
                        Action::Submit(n) => {
                            out.counters.orders += 1;
                            Request::NewOrder(n)
                        }
                    };
                    net.send(&mut q, now, i, req);
                }
            }
            Event::Stress(k) => {
                let order = plan.as_ref().expect("stress scheduled").orders[k];
                out.counters.stress_orders += 1;
                let req = Request::NewOrder(NewOrderRequest {
                    client_order_id: 1,
                    symbol: symbol.clone(),
                    side: Side::Sell,
                    kind: OrderKind::Market,
                    size: order.shares,
                    limit_price: None,
                });
                net.send(&mut q, now, a.n + order.trader, req);
            }
            Event::Arrive(session, req) => {
                let outbound = ex.ingest(now, &traders[session], req);
                net.dispatch(&mut q, now, &ex, &symbol, &session_of, outbound, &mut out.counters, Some(&mut out.last_prices));
                out.counters.exchange_events += 1;
                if audit {
                    ex.check_invariants()
                        .map_err(|e| anyhow::anyhow!("after exchange event {} at {now} us: {e}", out.counters.exchange_events))?;
                }
            }
            Event::Replay(ev) => {
                out.counters.replay_events += 1;
                let outbound = match &ev {
                    ReplayEvent::Quote(tick) => ex.apply_quote(now, tick.to_global(tick.source_time_us)),
                    ReplayEvent::Trade(tick) => ex.apply_external_trade(now, &symbol, tick.price, tick.size),
                };
                // Replayed prints move the displayed last price but are not local trades.
                let prints = matches!(ev, ReplayEvent::Quote(_)).then_some(&mut out.last_prices);
                net.dispatch(&mut q, now, &ex, &symbol, &session_of, outbound, &mut out.counters, prints);
                out.counters.exchange_events += 1;
                if audit {
                    ex.check_invariants()
                        .map_err(|e| anyhow::anyhow!("after exchange event {} at {now} us: {e}", out.counters.exchange_events))?;
                }
            }
            Event::Deliver(i, msg) => match msg {
                ToClient::Ack(ack) => agents[i].on_ack(&ack),
                ToClient::Report(r) => agents[i].on_report(&r),
                ToClient::Portfolio(p) => agents[i].on_portfolio(&p),
            },
            Event::Publish(v) => view = v,
        }
    }
    while next_sample <= session_end {
        take_sample(&ex, next_sample, &mut out);
        next_sample += sample_every;
    }
    ex.check_invariants().map_err(|e| anyhow::anyhow!("invariant violated at end of run: {e}"))?;
    out.trades = std::mem::take(&mut *tape.0.lock().expect("tape lock"));
    out.wall_seconds = started.elapsed().as_secs_f64();
    Ok(out)
}

/// Message delays between the exchange and its sessions. Each session's
/// queue is FIFO in both directions.
struct Network {
    lat: LatencyConfig,
    rng: ChaCha8Rng,
    jitter: Option<Exp<f64>>,
    last_arrival: Vec<Timestamp>,
    last_delivery: Vec<Timestamp>,
    /// Sessions below this index are ZI agents that consume replies.
    agents: usize,
    published: MarketView,
}

impl Network {
    fn send(&mut self, q: &mut Queue, now: Timestamp, session: usize, req: Request) {
        let extra = self.jitter.as_ref().map_or(0, |j| j.sample(&mut self.rng) as u64);
        let at = (now + self.lat.order_us + extra).max(self.last_arrival[session]);
        self.last_arrival[session] = at;
        q.push(at, Event::Arrive(session, req));
    }

    /// Route exchange output to the owning sessions and schedule a market
    /// data publish when the public view changed. Local trade prints go to
    /// `prints` when given.
    #[allow(clippy::too_many_arguments)]
    fn dispatch(
        &mut self,
        q: &mut Queue,
        now: Timestamp,
        ex: &Exchange,
        symbol: &Symbol,
        session_of: &HashMap<TraderId, usize>,
        outbound: Vec<Outbound>,
        counters: &mut RunCounters,
        mut prints: Option<&mut Vec<(Timestamp, Price)>>,
    ) {
        for msg in outbound {
            let (session, payload) = match msg {
                Outbound::Ack { trader, ack } => {
                    if ack.error.is_some() {
                        counters.rejected_orders += 1;
                    }
                    (session_of[&trader], ToClient::Ack(ack))
                }
                Outbound::Report { trader, report } => (session_of[&trader], ToClient::Report(report)),
                Outbound::PortfolioChanged(trader) => {
                    let p = ex.portfolio(&trader).expect("known trader").clone();
                    (session_of[&trader], ToClient::Portfolio(p))
                }
                Outbound::LastPrice { price, time, .. } => {
                    if let Some(prints) = prints.as_deref_mut() {
                        counters.trades += 1;
                        prints.push((time, price));
                    }
                    continue;
                }
                Outbound::BestPrice { .. } | Outbound::DepthChanged(_) => continue,
            };
            if session < self.agents {
                let at = (now + self.lat.report_us).max(self.last_delivery[session]);
                self.last_delivery[session] = at;
                q.push(at, Event::Deliver(session, payload));
            }
        }
        let book = ex.book(symbol).expect("configured symbol");
        let best = book.best_prices().combined;
        let current = MarketView {
            best_bid: best.bid.map(|l| l.price),
            best_ask: best.ask.map(|l| l.price),
            last_price: book.last_trade_price(),
        };
        if current != self.published {
            self.published = current;
            q.push(now + self.lat.market_data_us, Event::Publish(current));
        }
    }
}
