//! The sequencer: one task owns the [`Exchange`] and applies commands from
//! every session in the order they reach its queue. That order is the
//! arrival order; the exchange stamps sequence numbers as it ingests.
//!
//! Outbound events go to session outboxes in the order the exchange emits
//! them, so an owner's report always precedes the public update it caused.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{self, Write};
use std::sync::Arc;

use lobsim_core::clock::{Clock, ScaledClock};
use lobsim_core::exchange::{ErrorCode, Exchange, Outbound, Request};
use lobsim_core::protocol::ServerMsg;
use lobsim_core::replay::ReplayEvent;
use lobsim_core::types::{Cash, Symbol, TraderId};
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinHandle;

use crate::config::ServerConfig;
use crate::journal::{self, JournalEntry, JournalEvent};
use crate::outbox::Outbox;

pub type SessionId = u64;

/// Returned once the sequencer has stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stopped;

impl std::fmt::Display for Stopped {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("exchange sequencer has stopped")
    }
}

impl std::error::Error for Stopped {}

type Inspect = Box<dyn FnOnce(&Exchange) + Send>;

enum Command {
    Login {
        trader: TraderId,
        secret: Option<String>,
        outbox: Arc<Outbox>,
        reply: oneshot::Sender<Result<SessionId, ErrorCode>>,
    },
    Subscribe {
        session: SessionId,
        symbols: Vec<Symbol>,
    },
    Request {
        session: SessionId,
        request: Request,
    },
    Logout {
        session: SessionId,
        done: oneshot::Sender<()>,
    },
    Feed(ReplayEvent),
    Inspect(Inspect),
    Flush(oneshot::Sender<io::Result<()>>),
    Stop(oneshot::Sender<()>),
}

/// Handle to the sequencer. Cheap to clone; every session holds one.
#[derive(Clone)]
pub struct Hub {
    tx: mpsc::Sender<Command>,
}

impl Hub {
    async fn send(&self, cmd: Command) -> Result<(), Stopped> {
        self.tx.send(cmd).await.map_err(|_| Stopped)
    }

    /// Open a session whose messages are delivered to `outbox`. The WELCOME
    /// message is queued before this returns.
    pub async fn login(
        &self,
        trader: TraderId,
        secret: Option<String>,
        outbox: Arc<Outbox>,
    ) -> Result<Result<SessionId, ErrorCode>, Stopped> {
        let (reply, rx) = oneshot::channel();
        self.send(Command::Login {
            trader,
            secret,
            outbox,
            reply,
        })
        .await?;
        rx.await.map_err(|_| Stopped)
    }

    pub async fn subscribe(&self, session: SessionId, symbols: Vec<Symbol>) -> Result<(), Stopped> {
        self.send(Command::Subscribe { session, symbols }).await
    }

    pub async fn request(&self, session: SessionId, request: Request) -> Result<(), Stopped> {
        self.send(Command::Request { session, request }).await
    }

    /// End a session. Returns once every request sent before it has been
    /// processed, so the outbox holds all of the session's replies.
    pub async fn logout(&self, session: SessionId) -> Result<(), Stopped> {
        let (done, rx) = oneshot::channel();
        self.send(Command::Logout { session, done }).await?;
        rx.await.map_err(|_| Stopped)
    }

    /// Hand a replayed quote or trade print to the exchange.
    pub async fn feed(&self, event: ReplayEvent) -> Result<(), Stopped> {
        self.send(Command::Feed(event)).await
    }

    /// Run `f` against the exchange between two commands, so it sees a state
    /// at a sequence boundary.
    pub async fn inspect<T, F>(&self, f: F) -> Result<T, Stopped>
    where
        T: Send + 'static,
        F: FnOnce(&Exchange) -> T + Send + 'static,
    {
        let (tx, rx) = oneshot::channel();
        self.send(Command::Inspect(Box::new(move |ex| {
            let _ = tx.send(f(ex));
        })))
        .await?;
        rx.await.map_err(|_| Stopped)
    }

    /// Flush the trade log and journal now.
    pub async fn flush(&self) -> Result<io::Result<()>, Stopped> {
        let (tx, rx) = oneshot::channel();
        self.send(Command::Flush(tx)).await?;
        rx.await.map_err(|_| Stopped)
    }

    pub(crate) async fn stop(&self) {
        let (tx, rx) = oneshot::channel();
        if self.send(Command::Stop(tx)).await.is_ok() {
            let _ = rx.await;
        }
    }
}

struct SessionEntry {
    trader: TraderId,
    outbox: Arc<Outbox>,
    symbols: BTreeSet<Symbol>,
}

struct Sequencer {
    ex: Exchange,
    cfg: Arc<ServerConfig>,
    clock: Arc<ScaledClock>,
    sessions: BTreeMap<SessionId, SessionEntry>,
    by_trader: HashMap<TraderId, SessionId>,
    next_session: SessionId,
    journal: Option<Box<dyn Write + Send>>,
    halt_reported: bool,
}

/// Start the sequencer. Configured accounts are opened first, through the
/// journal like everything else.
pub(crate) fn spawn(
    ex: Exchange,
    cfg: Arc<ServerConfig>,
    clock: Arc<ScaledClock>,
    journal: Option<Box<dyn Write + Send>>,
) -> (Hub, JoinHandle<Exchange>) {
    let (tx, rx) = mpsc::channel(4096);
    let mut seq = Sequencer {
        ex,
        cfg,
        clock,
        sessions: BTreeMap::new(),
        by_trader: HashMap::new(),
        next_session: 1,
        journal,
        halt_reported: false,
    };
    for a in seq.cfg.accounts.clone() {
        seq.apply(JournalEvent::OpenAccount {
            trader: a.trader_id,
            cash: Cash::from_dollars(a.cash),
            holdings: a.shares.into_iter().collect(),
        });
    }
    let handle = tokio::spawn(seq.run(rx));
    (Hub { tx }, handle)
}

impl Sequencer {
    async fn run(mut self, mut rx: mpsc::Receiver<Command>) -> Exchange {
        let mut flush = tokio::time::interval(self.cfg.flush_interval());
        flush.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            tokio::select! {
                cmd = rx.recv() => match cmd {
                    Some(Command::Stop(done)) => {
                        self.shutdown();
                        let _ = done.send(());
                        break;
                    }
                    Some(cmd) => self.handle(cmd),
                    None => {
                        self.shutdown();
                        break;
                    }
                },
                _ = flush.tick() => {
                    let _ = self.flush();
                }
            }
        }
        self.ex
    }

    fn shutdown(&mut self) {
        let _ = self.flush();
        for s in self.sessions.values() {
            s.outbox.close();
        }
        self.sessions.clear();
        self.by_trader.clear();
    }

    /// A failed trade-log flush is a persistence failure: stop taking orders.
    fn flush(&mut self) -> io::Result<()> {
        if let Some(j) = self.journal.as_mut() {
            if let Err(e) = j.flush() {
                tracing::warn!("journal flush failed, journal disabled: {e}");
                self.journal = None;
            }
        }
        let result = self.ex.flush_sink();
        if let Err(e) = &result {
            if !self.ex.is_halted() {
                tracing::error!("trade log flush failed, halting order acceptance: {e}");
            }
            self.ex.halt();
            self.halt_reported = true;
        }
        result
    }

    fn handle(&mut self, cmd: Command) {
        match cmd {
            Command::Login {
                trader,
                secret,
                outbox,
                reply,
            } => {
                let _ = reply.send(self.login(trader, secret, outbox));
            }
            Command::Subscribe { session, symbols } => self.subscribe(session, symbols),
            Command::Request { session, request } => {
                let Some(s) = self.sessions.get(&session) else {
                    return;
                };
                let trader = s.trader.clone();
                let event = match request {
                    Request::NewOrder(request) => JournalEvent::NewOrder { trader, request },
                    Request::Cancel(request) => JournalEvent::Cancel { trader, request },
                };
                let out = self.apply(event);
                self.publish(out);
            }
            Command::Logout { session, done } => {
                self.remove(session);
                let _ = done.send(());
            }
            Command::Feed(event) => {
                let event = match event {
                    ReplayEvent::Quote(q) => JournalEvent::Quote {
                        quote: q.to_global(q.source_time_us),
                    },
                    ReplayEvent::Trade(t) => JournalEvent::ExternalTrade {
                        symbol: t.symbol,
                        price: t.price,
                        size: t.size,
                    },
                };
                let out = self.apply(event);
                self.publish(out);
            }
            Command::Inspect(f) => f(&self.ex),
            Command::Flush(reply) => {
                let _ = reply.send(self.flush());
            }
            Command::Stop(_) => unreachable!("handled by the loop"),
        }
    }

    fn apply(&mut self, event: JournalEvent) -> Vec<Outbound> {
        let entry = JournalEntry {
            time_us: self.clock.now(),
            event,
        };
        if let Some(j) = self.journal.as_mut() {
            if let Err(e) = journal::write_entry(j, &entry) {
                tracing::warn!("journal write failed, journal disabled: {e}");
                self.journal = None;
            }
        }
        let out = journal::apply(&mut self.ex, &entry);
        if self.ex.is_halted() && !self.halt_reported {
            tracing::error!("trade log append failed, order acceptance halted");
            self.halt_reported = true;
        }
        out
    }

    fn login(&mut self, trader: TraderId, secret: Option<String>, outbox: Arc<Outbox>) -> Result<SessionId, ErrorCode> {
        if let Some(expected) = &self.cfg.shared_secret {
            if secret.as_ref() != Some(expected) {
                return Err(ErrorCode::AuthFailed);
            }
        }
        if self.by_trader.contains_key(&trader) {
            return Err(ErrorCode::AlreadyLoggedIn);
        }
        if !self.ex.has_account(&trader) {
            let Some(d) = self.cfg.default_account.clone() else {
                return Err(ErrorCode::UnknownAccount);
            };
            self.apply(JournalEvent::OpenAccount {
                trader: trader.clone(),
                cash: Cash::from_dollars(d.cash),
                holdings: d.shares.into_iter().collect(),
            });
        }
        let id = self.next_session;
        self.next_session += 1;
        let account = self.ex.snapshot_state(&trader).expect("account exists");
        outbox.push(ServerMsg::Welcome {
            account,
            symbols: self.ex.symbols().cloned().collect(),
            depth_levels: self.cfg.depth_levels,
        });
        tracing::info!(%trader, session = id, "login");
        self.by_trader.insert(trader.clone(), id);
        self.sessions.insert(
            id,
            SessionEntry {
                trader,
                outbox,
                symbols: BTreeSet::new(),
            },
        );
        Ok(id)
    }

    fn subscribe(&mut self, session: SessionId, symbols: Vec<Symbol>) {
        let Some(s) = self.sessions.get_mut(&session) else {
            return;
        };
        for symbol in symbols {
            match self.ex.bootstrap(&symbol) {
                Some(snapshot) => {
                    s.symbols.insert(symbol);
                    s.outbox.push(ServerMsg::Bootstrap(snapshot));
                }
                None => {
                    s.outbox.push(ServerMsg::Error {
                        code: ErrorCode::UnknownSymbol,
                        message: format!("unknown symbol {symbol}"),
                    });
                }
            }
        }
    }

    fn remove(&mut self, session: SessionId) {
        if let Some(s) = self.sessions.remove(&session) {
            self.by_trader.remove(&s.trader);
            tracing::info!(trader = %s.trader, session, "session closed");
        }
    }

    fn publish(&mut self, out: Vec<Outbound>) {
        let mut dead = Vec::new();
        for o in out {
            match o {
                Outbound::Ack { trader, ack } => self.to_trader(&trader, ServerMsg::Ack(ack), &mut dead),
                Outbound::Report { trader, report } => self.to_trader(&trader, ServerMsg::Report(report), &mut dead),
                Outbound::PortfolioChanged(trader) => {
                    if let Some(p) = self.ex.portfolio(&trader) {
                        let msg = ServerMsg::Portfolio(p.clone());
                        self.to_trader(&trader, msg, &mut dead);
                    }
                }
                Outbound::LastPrice {
                    symbol,
                    price,
                    size,
                    time,
                } => {
                    let msg = ServerMsg::LastPrice {
                        symbol: symbol.clone(),
                        price,
                        size,
                        time_us: time,
                    };
                    self.to_subscribers(&symbol, msg, &mut dead);
                }
                Outbound::BestPrice { symbol, best, time } => {
                    let msg = ServerMsg::BestPrice {
                        symbol: symbol.clone(),
                        best,
                        time_us: time,
                    };
                    self.to_subscribers(&symbol, msg, &mut dead);
                }
                Outbound::DepthChanged(symbol) => {
                    let Some(book) = self.ex.book(&symbol) else {
                        continue;
                    };
                    let msg = ServerMsg::Depth {
                        symbol: symbol.clone(),
                        depth: book.depth_snapshot(self.cfg.depth_levels),
                        as_of_seq: self.ex.last_arrival_seq(),
                    };
                    self.to_subscribers(&symbol, msg, &mut dead);
                }
            }
        }
        for id in dead {
            if let Some(s) = self.sessions.get(&id) {
                tracing::warn!(trader = %s.trader, session = id, "slow consumer disconnected");
            }
            self.remove(id);
        }
    }

    fn to_trader(&self, trader: &TraderId, msg: ServerMsg, dead: &mut Vec<SessionId>) {
        if let Some(&id) = self.by_trader.get(trader) {
            if !self.sessions[&id].outbox.push(msg) {
                dead.push(id);
            }
        }
    }

    fn to_subscribers(&self, symbol: &Symbol, msg: ServerMsg, dead: &mut Vec<SessionId>) {
        for (id, s) in &self.sessions {
            if s.symbols.contains(symbol) && !s.outbox.push(msg.clone()) {
                dead.push(*id);
            }
        }
    }
}
