//! The networked exchange.
//!
//! Clients connect over TCP (newline-delimited JSON frames) or over the
//! websocket gateway. Every session feeds one sequencer task that owns the
//! [`Exchange`](lobsim_core::Exchange); see [`hub`] for the ordering rules
//! and [`outbox`] for delivery and backpressure.

pub mod config;
pub mod hub;
pub mod journal;
pub mod outbox;
mod session;
mod web;

use std::fs::File;
use std::io::BufWriter;
use std::net::SocketAddr;
use std::sync::Arc;

use anyhow::Context;
use lobsim_core::clock::{Clock, ScaledClock};
use lobsim_core::exchange::Exchange;
use lobsim_core::persist::{NullSink, TradeLogHeader, TradeLogWriter, TradeSink};
use lobsim_core::replay::{self, ReplayCursor, ReplayEvent};
use tokio::net::TcpListener;
use tokio::task::JoinHandle;
use tokio_util::sync::CancellationToken;

pub use config::ServerConfig;
pub use hub::{Hub, SessionId, Stopped};
pub use session::MAX_FRAME_BYTES;

pub struct Server {
    addr: SocketAddr,
    web_addr: Option<SocketAddr>,
    hub: Hub,
    clock: Arc<ScaledClock>,
    stop: CancellationToken,
    tasks: Vec<JoinHandle<()>>,
    sequencer: JoinHandle<Exchange>,
}

impl Server {
    /// Bind the listeners and start serving, with the trade log configured
    /// in `cfg` (or none).
    pub async fn start(cfg: ServerConfig) -> anyhow::Result<Server> {
        let sink: Box<dyn TradeSink> = match &cfg.trade_log {
            Some(path) => {
                let file = create(path).with_context(|| format!("creating trade log {}", path.display()))?;
                let header = TradeLogHeader::new(
                    cfg.exchange_config().fee_per_share,
                    cfg.symbols.iter().map(|s| s.symbol.clone()).collect(),
                );
                Box::new(TradeLogWriter::new(BufWriter::new(file), &header, cfg.flush_interval())?)
            }
            None => Box::new(NullSink),
        };
        Server::start_with_sink(cfg, sink).await
    }

    /// Start with an explicit trade sink; `cfg.trade_log` is ignored.
    pub async fn start_with_sink(cfg: ServerConfig, sink: Box<dyn TradeSink>) -> anyhow::Result<Server> {
        cfg.validate()?;
        let replay_events = match &cfg.replay {
            Some(path) => Some(replay::load_path(path).with_context(|| format!("replay file {}", path.display()))?),
            None => None,
        };
        let journal: Option<Box<dyn std::io::Write + Send>> = match &cfg.journal {
            Some(path) => Some(Box::new(BufWriter::new(
                create(path).with_context(|| format!("creating journal {}", path.display()))?,
            ))),
            None => None,
        };
        let listener = TcpListener::bind(cfg.listen)
            .await
            .with_context(|| format!("binding {}", cfg.listen))?;
        let addr = listener.local_addr()?;
        let web_listener = match cfg.web_listen {
            Some(a) => Some(TcpListener::bind(a).await.with_context(|| format!("binding {a}"))?),
            None => None,
        };

        let cfg = Arc::new(cfg);
        let clock = Arc::new(ScaledClock::new(cfg.time_scale));
        let exchange = Exchange::with_sink(cfg.exchange_config(), sink);
        let (hub, sequencer) = hub::spawn(exchange, cfg.clone(), clock.clone(), journal);
        let stop = CancellationToken::new();
        let mut tasks = vec![tokio::spawn(session::accept_tcp(
            listener,
            hub.clone(),
            cfg.outbox_capacity,
            stop.clone(),
        ))];

        let mut web_addr = None;
        if let Some(l) = web_listener {
            web_addr = Some(l.local_addr()?);
            let app = web::router(hub.clone(), cfg.outbox_capacity, cfg.static_dir.clone());
            let stop = stop.clone();
            tasks.push(tokio::spawn(async move {
                if let Err(e) = axum::serve(l, app).with_graceful_shutdown(stop.cancelled_owned()).await {
                    tracing::error!("web gateway stopped: {e}");
                }
            }));
        }
        if let Some(events) = replay_events {
            tasks.push(tokio::spawn(stream_replay(hub.clone(), clock.clone(), events, stop.clone())));
        }
        tracing::info!(%addr, web = ?web_addr, time_scale = cfg.time_scale, "exchange listening");
        Ok(Server {
            addr,
            web_addr,
            hub,
            clock,
            stop,
            tasks,
            sequencer,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn web_addr(&self) -> Option<SocketAddr> {
        self.web_addr
    }

    pub fn hub(&self) -> Hub {
        self.hub.clone()
    }

    /// Current simulation time in microseconds.
    pub fn now(&self) -> lobsim_core::types::Timestamp {
        self.clock.now()
    }

    /// Stop accepting connections and the replay feed, flush the trade log,
    /// close every session after its queued messages, and return the final
    /// exchange state.
    pub async fn shutdown(self) -> anyhow::Result<Exchange> {
        self.stop.cancel();
        for t in self.tasks {
            let _ = t.await;
        }
        self.hub.stop().await;
        let mut ex = self.sequencer.await.context("sequencer task failed")?;
        ex.flush_sink().context("flushing trade log")?;
        Ok(ex)
    }
}

fn create(path: &std::path::Path) -> std::io::Result<File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    File::create(path)
}

/// Stream recorded quotes into the exchange on the server clock. The first
/// event is due as soon as the server starts.
async fn stream_replay(hub: Hub, clock: Arc<ScaledClock>, events: Vec<ReplayEvent>, stop: CancellationToken) {
    let mut cursor = ReplayCursor::new(events, clock.now());
    while let Some(due) = cursor.next_due() {
        tokio::select! {
            _ = tokio::time::sleep(clock.wall_delay_until(due)) => {}
            _ = stop.cancelled() => return,
        }
        while let Some((_, event)) = cursor.pop_due(due) {
            if hub.feed(event).await.is_err() {
                return;
            }
        }
    }
    tracing::info!("replay feed finished");
}

/// Run a server until Ctrl-C, on a runtime of its own.
pub fn run_until_interrupted(cfg: ServerConfig) -> anyhow::Result<()> {
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let server = Server::start(cfg).await?;
        println!("order entry on {}", server.addr());
        if let Some(web) = server.web_addr() {
            println!("web gateway on http://{web}/ (websocket at /ws)");
        }
        tokio::signal::ctrl_c().await?;
        let ex = server.shutdown().await?;
        println!("stopped after {} arrivals", ex.last_arrival_seq());
        Ok(())
    })
}
