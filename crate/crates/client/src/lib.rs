//! Blocking client for the lobsim exchange.
//!
//! A [`Trader`] owns one session. Market data and the account are cached
//! locally from the server's event stream, so queries never touch the
//! network. Callbacks run on a single background reader thread, one at a
//! time and in the order the server sent the events.
//!
//! ```no_run
//! use lobsim_client::Trader;
//! use lobsim_core::types::{OrderKind, Price, Side};
//!
//! let trader = Trader::new("alice", None);
//! trader.connect("127.0.0.1:7400", &["CS1"])?;
//! trader.on_last_price_updated("CS1", |t, print| {
//!     println!("{} traded at {}, {} shares held", print.symbol, print.price, t.get_portfolio_item("CS1").shares);
//! });
//! trader.submit_order(Side::Buy, OrderKind::Limit, "CS1", 100, Some(Price(9_990)))?;
//! trader.disconnect();
//! # Ok::<(), lobsim_client::ClientError>(())
//! ```

mod cache;

use std::io::{self, BufRead, BufReader, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::{self, JoinHandle, ThreadId};
use std::time::{Duration, Instant};

use lobsim_core::exchange::{Ack, CancelRequest, ErrorCode, NewOrderRequest, OpenOrderView, OrderReport, Portfolio, Position};
use lobsim_core::order_book::{BestPrices, DepthSnapshot};
use lobsim_core::protocol::{decode, encode, ClientMsg, Frame, ServerMsg};
use lobsim_core::types::{Cash, OrderKind, Price, Side, Symbol, TraderId};

pub use cache::TradePrint;
use cache::Cache;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("already connected")]
    AlreadyConnected,
    #[error("not connected")]
    NotConnected,
    #[error("server refused: {code}: {message}")]
    Refused { code: ErrorCode, message: String },
    #[error("timed out waiting for {0}")]
    Timeout(&'static str),
    #[error("invalid order: {0}")]
    InvalidOrder(&'static str),
    #[error("unreadable frame from server: {0}")]
    Protocol(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, ClientError>;

/// Handle returned by the `on_*` registrations, for [`Trader::remove_callback`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CallbackId(u64);

type Callback = Box<dyn FnMut(&Trader, u64, &ServerMsg) + Send>;

struct Connection {
    writer: TcpStream,
    seq: u64,
    reader: Option<JoinHandle<()>>,
    reader_thread: Option<ThreadId>,
}

#[derive(Default)]
struct Callbacks {
    /// Only the thread dispatching events locks this.
    active: Mutex<Vec<(CallbackId, Callback)>>,
    /// New registrations, picked up before the next event. Keeps callbacks
    /// free to register further callbacks.
    added: Mutex<Vec<(CallbackId, Callback)>>,
    removed: Mutex<Vec<CallbackId>>,
    next_id: AtomicU64,
    panics: AtomicU64,
}

#[derive(Default)]
struct Status {
    connected: bool,
    /// Frames fully processed, callbacks included.
    processed: u64,
    closed_by: Option<ErrorCode>,
}

struct Inner {
    trader_id: TraderId,
    secret: Option<String>,
    timeout: Mutex<Duration>,
    cache: Mutex<Cache>,
    conn: Mutex<Option<Connection>>,
    status: Mutex<Status>,
    progress: Condvar,
    callbacks: Callbacks,
}

/// One trader's session with the exchange. Cloning gives another handle to
/// the same session.
#[derive(Clone)]
pub struct Trader {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for Trader {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Trader")
            .field("trader_id", &self.inner.trader_id)
            .field("connected", &self.is_connected())
            .finish()
    }
}

impl Trader {
    pub fn new(trader_id: impl Into<String>, secret: Option<&str>) -> Trader {
        Trader {
            inner: Arc::new(Inner {
                trader_id: TraderId::new(trader_id),
                secret: secret.map(str::to_string),
                timeout: Mutex::new(Duration::from_secs(10)),
                cache: Mutex::new(Cache::default()),
                conn: Mutex::new(None),
                status: Mutex::new(Status::default()),
                progress: Condvar::new(),
                callbacks: Callbacks::default(),
            }),
        }
    }

    pub fn trader_id(&self) -> &TraderId {
        &self.inner.trader_id
    }

    /// How long `connect` waits for the login handshake and `disconnect`
    /// waits for the server to close. Ten seconds by default.
    pub fn set_timeout(&self, timeout: Duration) {
        *lock(&self.inner.timeout) = timeout;
    }

    fn timeout(&self) -> Duration {
        *lock(&self.inner.timeout)
    }

    /// Log in and subscribe to `symbols`. Returns once the account snapshot
    /// and a book snapshot for every symbol are in the cache.
    pub fn connect(&self, addr: impl ToSocketAddrs, symbols: &[&str]) -> Result<()> {
        let mut conn = lock(&self.inner.conn);
        if let Some(c) = conn.as_mut() {
            if c.reader.as_ref().is_some_and(|r| !r.is_finished()) {
                return Err(ClientError::AlreadyConnected);
            }
            // The server dropped us earlier; clear the remains.
            if let Some(r) = c.reader.take() {
                let _ = r.join();
            }
            *conn = None;
        }
        let timeout = self.timeout();
        let addr = addr
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "no address"))?;
        let stream = TcpStream::connect_timeout(&addr, timeout)?;
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(timeout))?;
        let mut reader = BufReader::new(stream.try_clone()?);
        let mut c = Connection {
            writer: stream,
            seq: 0,
            reader: None,
            reader_thread: None,
        };
        {
            let mut cache = lock(&self.inner.cache);
            let keep = cache.max_client_order_id;
            *cache = Cache {
                max_client_order_id: keep,
                ..Cache::default()
            };
        }
        *lock(&self.inner.status) = Status {
            connected: true,
            ..Status::default()
        };
        let mut early = Vec::new();
        let handshake = (|| {
            send(
                &mut c,
                ClientMsg::Login {
                    trader_id: self.inner.trader_id.clone(),
                    secret: self.inner.secret.clone(),
                },
            )?;
            self.read_until(&mut reader, &mut early, "WELCOME", |m| matches!(m, ServerMsg::Welcome { .. }))?;
            if !symbols.is_empty() {
                send(
                    &mut c,
                    ClientMsg::Subscribe {
                        symbols: symbols.iter().map(|s| Symbol::from(*s)).collect(),
                    },
                )?;
                for _ in symbols {
                    self.read_until(&mut reader, &mut early, "BOOTSTRAP", |m| matches!(m, ServerMsg::Bootstrap(_)))?;
                }
            }
            c.writer.set_read_timeout(None)?;
            Ok(())
        })();
        if let Err(e) = handshake {
            let _ = c.writer.shutdown(Shutdown::Both);
            lock(&self.inner.status).connected = false;
            return Err(e);
        }
        let me = self.clone();
        let handle = thread::Builder::new()
            .name(format!("lobsim-{}", self.inner.trader_id))
            .spawn(move || me.read_loop(early, reader))?;
        c.reader_thread = Some(handle.thread().id());
        c.reader = Some(handle);
        *conn = Some(c);
        Ok(())
    }

    /// Read frames during the handshake until `done` matches. A server
    /// ERROR fails the handshake. Frames go into the cache now; their
    /// callbacks run later on the reader thread, so a callback can never
    /// block `connect`.
    fn read_until(
        &self,
        reader: &mut BufReader<TcpStream>,
        early: &mut Vec<Frame<ServerMsg>>,
        what: &'static str,
        done: impl Fn(&ServerMsg) -> bool,
    ) -> Result<()> {
        let deadline = Instant::now() + self.timeout();
        loop {
            if Instant::now() > deadline {
                return Err(ClientError::Timeout(what));
            }
            let frame = match read_frame(reader) {
                Ok(Some(f)) => f,
                Ok(None) => return Err(io::Error::from(io::ErrorKind::UnexpectedEof).into()),
                Err(ClientError::Io(e)) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                    return Err(ClientError::Timeout(what))
                }
                Err(e) => return Err(e),
            };
            if let ServerMsg::Error { code, message } = &frame.msg {
                return Err(ClientError::Refused {
                    code: *code,
                    message: message.clone(),
                });
            }
            let matched = done(&frame.msg);
            lock(&self.inner.cache).apply(frame.seq, &frame.msg);
            early.push(frame);
            if matched {
                return Ok(());
            }
        }
    }

    fn read_loop(self, early: Vec<Frame<ServerMsg>>, mut reader: BufReader<TcpStream>) {
        for frame in early {
            self.finish(frame.seq, &frame.msg);
        }
        let mut closed_by = None;
        loop {
            match read_frame(&mut reader) {
                Ok(Some(frame)) => {
                    if let ServerMsg::Error {
                        code: code @ ErrorCode::SlowConsumer,
                        ..
                    } = frame.msg
                    {
                        closed_by = Some(code);
                    }
                    self.handle(frame);
                }
                Ok(None) => break,
                Err(ClientError::Protocol(e)) => tracing::warn!(trader = %self.inner.trader_id, "skipping frame: {e}"),
                Err(e) => {
                    tracing::debug!(trader = %self.inner.trader_id, "connection ended: {e}");
                    break;
                }
            }
        }
        let mut status = lock(&self.inner.status);
        status.connected = false;
        status.closed_by = closed_by;
        drop(status);
        self.inner.progress.notify_all();
    }

    /// Update the cache, then run callbacks.
    fn handle(&self, frame: Frame<ServerMsg>) {
        lock(&self.inner.cache).apply(frame.seq, &frame.msg);
        self.finish(frame.seq, &frame.msg);
    }

    fn finish(&self, seq: u64, msg: &ServerMsg) {
        self.dispatch(seq, msg);
        lock(&self.inner.status).processed = seq;
        self.inner.progress.notify_all();
    }

    fn dispatch(&self, seq: u64, msg: &ServerMsg) {
        let cb = &self.inner.callbacks;
        let mut active = lock(&cb.active);
        active.append(&mut lock(&cb.added));
        let removed: Vec<_> = std::mem::take(&mut *lock(&cb.removed));
        if !removed.is_empty() {
            active.retain(|(id, _)| !removed.contains(id));
        }
        for (id, f) in active.iter_mut() {
            if lock(&cb.removed).contains(id) {
                continue;
            }
            if catch_unwind(AssertUnwindSafe(|| f(self, seq, msg))).is_err() {
                cb.panics.fetch_add(1, Ordering::Relaxed);
                tracing::error!(trader = %self.inner.trader_id, seq, "callback panicked; the session continues");
            }
        }
    }

    /// Log out and wait until the server has delivered everything queued
    /// for this session. Safe to call more than once, and from a callback
    /// (then it returns without waiting).
    pub fn disconnect(&self) {
        let Some(mut c) = lock(&self.inner.conn).take() else {
            return;
        };
        let _ = send(&mut c, ClientMsg::Logout);
        let on_reader = c.reader_thread == Some(thread::current().id());
        if !on_reader {
            // Bound the wait in case the server never closes.
            let _ = c.writer.set_read_timeout(Some(self.timeout()));
            if let Some(r) = c.reader.take() {
                let _ = r.join();
            }
            let _ = c.writer.shutdown(Shutdown::Both);
        }
    }

    pub fn is_connected(&self) -> bool {
        lock(&self.inner.status).connected
    }

    /// Why the server ended the session, when it was not a logout.
    pub fn closed_by(&self) -> Option<ErrorCode> {
        lock(&self.inner.status).closed_by
    }

    /// Number of the last server frame whose callbacks have all run.
    pub fn processed_seq(&self) -> u64 {
        lock(&self.inner.status).processed
    }

    /// Block until `ready` holds or `timeout` passes. `ready` is checked
    /// after every processed frame; returns its final value.
    pub fn wait_until(&self, timeout: Duration, mut ready: impl FnMut(&Trader) -> bool) -> bool {
        let deadline = Instant::now() + timeout;
        let mut status = lock(&self.inner.status);
        loop {
            drop(status);
            if ready(self) {
                return true;
            }
            status = lock(&self.inner.status);
            let now = Instant::now();
            if now >= deadline || !status.connected {
                drop(status);
                return ready(self);
            }
            status = self
                .inner
                .progress
                .wait_timeout(status, (deadline - now).min(Duration::from_millis(50)))
                .expect("status lock")
                .0;
        }
    }

    // Order entry.

    /// Send a new order and return its client order id. The outcome arrives
    /// as an ACK and execution reports.
    pub fn submit_order(
        &self,
        side: Side,
        kind: OrderKind,
        symbol: &str,
        size: u64,
        limit_price: Option<Price>,
    ) -> Result<u64> {
        self.enter(NewOrderRequest {
            client_order_id: 0,
            symbol: Symbol::from(symbol),
            side,
            kind,
            size,
            limit_price,
        })
    }

    /// Send a request that carries its own client order id, which must be
    /// above every id this trader has used.
    pub fn send_order(&self, req: NewOrderRequest) -> Result<u64> {
        if req.client_order_id == 0 {
            return Err(ClientError::InvalidOrder("client order ids start at 1"));
        }
        self.enter(req)
    }

    /// Id 0 means "next free id".
    fn enter(&self, mut req: NewOrderRequest) -> Result<u64> {
        let mut conn = lock(&self.inner.conn);
        let c = conn.as_mut().ok_or(ClientError::NotConnected)?;
        {
            let mut cache = lock(&self.inner.cache);
            if !cache.symbols.contains(&req.symbol) {
                return Err(ClientError::InvalidOrder("unknown symbol"));
            }
            if req.size == 0 {
                return Err(ClientError::InvalidOrder("size must be positive"));
            }
            match (req.kind, req.limit_price) {
                (OrderKind::Limit, None) => return Err(ClientError::InvalidOrder("limit order needs a price")),
                (OrderKind::Limit, Some(Price(0))) => return Err(ClientError::InvalidOrder("price must be positive")),
                (OrderKind::Market, Some(_)) => return Err(ClientError::InvalidOrder("market order takes no price")),
                _ => {}
            }
            if req.client_order_id == 0 {
                req.client_order_id = cache.max_client_order_id + 1;
            } else if req.client_order_id <= cache.max_client_order_id {
                return Err(ClientError::InvalidOrder("client order id already used"));
            }
            cache.sent(req.clone());
        }
        let cid = req.client_order_id;
        send(c, ClientMsg::NewOrder(req))?;
        Ok(cid)
    }

    /// Cancel what remains of an order.
    pub fn cancel_order(&self, client_order_id: u64) -> Result<()> {
        self.cancel(client_order_id, None)
    }

    /// Take `qty` shares off a resting order.
    pub fn reduce_order(&self, client_order_id: u64, qty: u64) -> Result<()> {
        self.cancel(client_order_id, Some(qty))
    }

    fn cancel(&self, client_order_id: u64, qty: Option<u64>) -> Result<()> {
        let mut conn = lock(&self.inner.conn);
        let c = conn.as_mut().ok_or(ClientError::NotConnected)?;
        send(c, ClientMsg::Cancel(CancelRequest { client_order_id, qty }))?;
        Ok(())
    }

    // Cached queries.

    /// Price of the last trade, or `None` before the first one.
    pub fn get_last_price(&self, symbol: &str) -> Option<Price> {
        self.get_last_trade(symbol).map(|t| t.price)
    }

    pub fn get_last_trade(&self, symbol: &str) -> Option<TradePrint> {
        lock(&self.inner.cache).last_trade.get(&Symbol::from(symbol)).cloned()
    }

    pub fn get_best_price(&self, symbol: &str) -> Option<BestPrices> {
        lock(&self.inner.cache).best.get(&Symbol::from(symbol)).copied()
    }

    /// Up to `levels` price levels per side, best first.
    pub fn get_order_book(&self, symbol: &str, levels: usize) -> Option<DepthSnapshot> {
        let cache = lock(&self.inner.cache);
        let d = cache.depth.get(&Symbol::from(symbol))?;
        Some(DepthSnapshot {
            bids: d.bids.iter().take(levels).cloned().collect(),
            asks: d.asks.iter().take(levels).cloned().collect(),
        })
    }

    /// Position in `symbol`; zero when none is held.
    pub fn get_portfolio_item(&self, symbol: &str) -> Position {
        lock(&self.inner.cache)
            .portfolio
            .as_ref()
            .and_then(|p| p.positions.get(&Symbol::from(symbol)).copied())
            .unwrap_or_default()
    }

    pub fn get_portfolio(&self) -> Option<Portfolio> {
        lock(&self.inner.cache).portfolio.clone()
    }

    pub fn get_buying_power(&self) -> Cash {
        lock(&self.inner.cache).portfolio.as_ref().map_or(Cash::ZERO, |p| p.buying_power)
    }

    /// Orders resting on the book, by client order id.
    pub fn open_orders(&self) -> Vec<OpenOrderView> {
        lock(&self.inner.cache).open_orders.values().cloned().collect()
    }

    pub fn symbols(&self) -> Vec<Symbol> {
        lock(&self.inner.cache).symbols.clone()
    }

    // Callbacks. Each runs on the reader thread after the cache reflects
    // the event. A panic is caught, logged and counted.

    /// Every server frame, with its sequence number.
    pub fn on_message(&self, f: impl FnMut(&Trader, u64, &ServerMsg) + Send + 'static) -> CallbackId {
        let cb = &self.inner.callbacks;
        let id = CallbackId(cb.next_id.fetch_add(1, Ordering::Relaxed));
        lock(&cb.added).push((id, Box::new(f)));
        id
    }

    pub fn on_last_price_updated(
        &self,
        symbol: &str,
        mut f: impl FnMut(&Trader, &TradePrint) + Send + 'static,
    ) -> CallbackId {
        let symbol = Symbol::from(symbol);
        self.on_message(move |t, seq, m| {
            if let ServerMsg::LastPrice {
                symbol: s,
                price,
                size,
                time_us,
            } = m
            {
                if *s == symbol {
                    f(
                        t,
                        &TradePrint {
                            symbol: s.clone(),
                            price: *price,
                            size: *size,
                            time_us: *time_us,
                            seq,
                        },
                    );
                }
            }
        })
    }

    pub fn on_best_price_updated(
        &self,
        symbol: &str,
        mut f: impl FnMut(&Trader, &BestPrices) + Send + 'static,
    ) -> CallbackId {
        let symbol = Symbol::from(symbol);
        self.on_message(move |t, _, m| match m {
            ServerMsg::BestPrice { symbol: s, best, .. } if *s == symbol => f(t, best),
            _ => {}
        })
    }

    /// Depth updates may be conflated when this client falls behind.
    pub fn on_depth_updated(
        &self,
        symbol: &str,
        mut f: impl FnMut(&Trader, &DepthSnapshot) + Send + 'static,
    ) -> CallbackId {
        let symbol = Symbol::from(symbol);
        self.on_message(move |t, _, m| match m {
            ServerMsg::Depth { symbol: s, depth, .. } if *s == symbol => f(t, depth),
            _ => {}
        })
    }

    pub fn on_execution_report(&self, mut f: impl FnMut(&Trader, &OrderReport) + Send + 'static) -> CallbackId {
        self.on_message(move |t, _, m| {
            if let ServerMsg::Report(r) = m {
                f(t, r)
            }
        })
    }

    pub fn on_ack(&self, mut f: impl FnMut(&Trader, &Ack) + Send + 'static) -> CallbackId {
        self.on_message(move |t, _, m| {
            if let ServerMsg::Ack(a) = m {
                f(t, a)
            }
        })
    }

    pub fn on_portfolio_updated(&self, mut f: impl FnMut(&Trader, &Portfolio) + Send + 'static) -> CallbackId {
        self.on_message(move |t, _, m| {
            if let ServerMsg::Portfolio(p) = m {
                f(t, p)
            }
        })
    }

    pub fn on_error(&self, mut f: impl FnMut(&Trader, ErrorCode, &str) + Send + 'static) -> CallbackId {
        self.on_message(move |t, _, m| {
            if let ServerMsg::Error { code, message } = m {
                f(t, *code, message)
            }
        })
    }

    /// Takes effect before the next event is dispatched.
    pub fn remove_callback(&self, id: CallbackId) {
        let cb = &self.inner.callbacks;
        lock(&cb.added).retain(|(i, _)| *i != id);
        lock(&cb.removed).push(id);
    }

    /// Callbacks that panicked so far.
    pub fn callback_panics(&self) -> u64 {
        self.inner.callbacks.panics.load(Ordering::Relaxed)
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    // A panicking callback never holds these locks, so poisoning only
    // follows a bug elsewhere; the data is still usable.
    m.lock().unwrap_or_else(|e| e.into_inner())
}

fn send(c: &mut Connection, msg: ClientMsg) -> io::Result<()> {
    c.seq += 1;
    let mut line = encode(&Frame::new(c.seq, msg));
    line.push('\n');
    c.writer.write_all(line.as_bytes())
}

fn read_frame(reader: &mut BufReader<TcpStream>) -> Result<Option<Frame<ServerMsg>>> {
    let mut line = String::new();
    if reader.read_line(&mut line)? == 0 {
        return Ok(None);
    }
    decode(line.trim_end()).map(Some).map_err(|e| ClientError::Protocol(format!("{e}: {line}")))
}
