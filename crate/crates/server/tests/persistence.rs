mod support;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;

use lobsim_core::exchange::ErrorCode;
use lobsim_core::order_book::ReportKind;
use lobsim_core::persist::{read_trade_log, rebuild_accounts, MemorySink, NullSink, TradeRecord, TradeSink};
use lobsim_core::protocol::ServerMsg;
use lobsim_core::types::{Cash, Price, Side, Symbol, TraderId};
use lobsim_server::journal;
use lobsim_server::Server;
use support::{ack, open_config, Raw};

#[tokio::test]
async fn empty_run_leaves_a_header_only_log() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = open_config();
    cfg.trade_log = Some(dir.path().join("trades.jsonl"));
    let server = Server::start(cfg).await.unwrap();
    server.shutdown().await.unwrap();
    let text = std::fs::read_to_string(dir.path().join("trades.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 1);
    let (_, records) = read_trade_log(text.as_bytes()).unwrap();
    assert!(records.is_empty());
}

fn last_prices(msgs: &[ServerMsg]) -> Vec<(Price, u64)> {
    msgs.iter()
        .filter_map(|m| match m {
            ServerMsg::LastPrice { price, size, .. } => Some((*price, *size)),
            _ => None,
        })
        .collect()
}

/// Three sessions and 1,000 trades: every session's last-price stream is the
/// trade log, exactly; fees and portfolios follow from the log.
#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn thousand_trades_match_the_log_in_every_session() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = open_config();
    cfg.fee_per_share = 0.0001;
    cfg.trade_log = Some(dir.path().join("trades.jsonl"));
    let server = Server::start(cfg).await.unwrap();

    let mut seller = Raw::connect(server.addr()).await;
    let mut buyer = Raw::connect(server.addr()).await;
    let mut watcher = Raw::connect(server.addr()).await;
    let initial_seller = seller.login("seller", &["CS1"]).await;
    let initial_buyer = buyer.login("buyer", &["CS1"]).await;
    watcher.login("watcher", &["CS1"]).await;

    // A ladder of one-share asks, then buys that lift it from the bottom.
    for i in 0..1_000u64 {
        seller.limit(i + 1, Side::Sell, 1, 10_000 + i).await;
    }
    let mut seen_seller = seller.ack_of(1_000).await;
    for i in 0..1_000u64 {
        buyer.limit(i + 1, Side::Buy, 1, 11_000).await;
    }
    buyer.limit(5_000, Side::Buy, 1, 9_000).await;
    let marker = |m: &ServerMsg| matches!(m, ServerMsg::Depth { depth, .. } if depth.bids.iter().any(|l| l.price == Price(9_000)));
    let seen_buyer = buyer.recv_until(marker).await;
    seen_seller.extend(seller.recv_until(marker).await);
    let seen_watcher = watcher.recv_until(marker).await;
    server.hub().flush().await.unwrap().unwrap();
    let live: BTreeMap<TraderId, _> = server
        .hub()
        .inspect(|ex| {
            ["seller", "buyer"]
                .map(|t| {
                    let snap = ex.snapshot_state(&TraderId::from(t)).unwrap();
                    (TraderId::from(t), snap)
                })
                .into_iter()
                .collect()
        })
        .await
        .unwrap();
    server.shutdown().await.unwrap();

    let (header, records) = read_trade_log(BufReader::new(File::open(dir.path().join("trades.jsonl")).unwrap())).unwrap();
    assert_eq!(records.len(), 1_000);
    assert!(records.windows(2).all(|w| w[0].exec_seq < w[1].exec_seq));
    let logged: Vec<(Price, u64)> = records.iter().map(|r| (r.price_ticks, r.size)).collect();
    assert_eq!(logged, (0..1_000).map(|i| (Price(10_000 + i), 1)).collect::<Vec<_>>());
    for (name, seen) in [("seller", &seen_seller), ("buyer", &seen_buyer), ("watcher", &seen_watcher)] {
        assert_eq!(last_prices(seen), logged, "{name}");
    }

    // Fees: both local sides pay $0.0001 per share.
    let fee = Cash::from_dollars(0.0001);
    let total_fees: Cash = live.values().map(|s| s.portfolio.fees_paid).sum();
    assert_eq!(total_fees, fee.times(2 * 1_000));
    assert_eq!(records.iter().map(|r| r.fee).sum::<Cash>(), total_fees);

    // Folding the log over the starting accounts gives the live portfolios.
    let initial = [initial_seller, initial_buyer]
        .into_iter()
        .map(|a| {
            let holdings = a
                .portfolio
                .positions
                .iter()
                .map(|(s, p)| (s.clone(), (p.shares, p.total_cost)))
                .collect();
            (a.portfolio.trader_id.clone(), (a.portfolio.buying_power, holdings))
        })
        .collect();
    let rebuilt = rebuild_accounts(&initial, header.fee_per_share, &records);
    for (trader, snap) in &live {
        let r = &rebuilt[trader];
        assert_eq!(r.cash, snap.portfolio.buying_power + snap.reserved_cash, "{trader}");
        assert_eq!(r.shares[&Symbol::from("CS1")], snap.portfolio.shares(&Symbol::from("CS1")), "{trader}");
        assert_eq!(r.realized_pnl, snap.portfolio.realized_pnl, "{trader}");
        assert_eq!(r.fees_paid, snap.portfolio.fees_paid, "{trader}");
    }
}

/// Reconnecting mid-run returns the account as of the labeled sequence
/// number, which a fresh exchange fed the journal up to that number agrees
/// with. Replaying the whole journal reproduces the trade log.
#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn reconnect_snapshot_matches_journal_replay() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = open_config();
    cfg.fee_per_share = 0.0001;
    cfg.trade_log = Some(dir.path().join("trades.jsonl"));
    cfg.journal = Some(dir.path().join("journal.jsonl"));
    let exchange_config = cfg.exchange_config();
    let server = Server::start(cfg).await.unwrap();

    let mut a = Raw::connect(server.addr()).await;
    let mut b = Raw::connect(server.addr()).await;
    a.login("a", &["CS1"]).await;
    b.login("b", &["CS1"]).await;
    for i in 0..40u64 {
        a.limit(i + 1, Side::Sell, 10 + i, 10_000 + (i % 7)).await;
        b.limit(i + 1, Side::Buy, 5 + i, 9_996 + (i % 9)).await;
    }
    a.ack_of(40).await;
    b.ack_of(40).await;
    a.cancel(3).await;
    a.send(lobsim_core::protocol::ClientMsg::Logout).await;
    while a.try_recv().await.is_some() {}

    // More activity while `a` is away, then reconnect.
    for i in 40..60u64 {
        b.limit(i + 1, Side::Buy, 7, 10_004).await;
    }
    b.ack_of(60).await;
    let mut a2 = Raw::connect(server.addr()).await;
    let snap = a2.login("a", &[]).await;
    assert!(!snap.open_orders.is_empty());
    assert_eq!(snap.max_client_order_id, 40);
    for i in 60..70u64 {
        b.limit(i + 1, Side::Sell, 3, 10_010).await;
    }
    b.ack_of(70).await;
    server.hub().flush().await.unwrap().unwrap();
    server.shutdown().await.unwrap();

    let entries = journal::read_journal(BufReader::new(File::open(dir.path().join("journal.jsonl")).unwrap())).unwrap();
    let at_login = journal::replay(exchange_config.clone(), Box::new(NullSink), &entries, Some(snap.as_of_seq));
    assert_eq!(at_login.last_arrival_seq(), snap.as_of_seq);
    assert_eq!(at_login.snapshot_state(&TraderId::from("a")).unwrap(), snap);

    let sink = SharedSink::default();
    journal::replay(exchange_config, Box::new(sink.clone()), &entries, None);
    let (_, logged) = read_trade_log(BufReader::new(File::open(dir.path().join("trades.jsonl")).unwrap())).unwrap();
    assert!(!logged.is_empty());
    assert_eq!(sink.records(), logged);
}

#[derive(Clone, Default)]
struct SharedSink(Arc<std::sync::Mutex<MemorySink>>);

impl SharedSink {
    fn records(&self) -> Vec<TradeRecord> {
        self.0.lock().unwrap().records.clone()
    }
}

impl TradeSink for SharedSink {
    fn append(&mut self, record: &TradeRecord) -> io::Result<()> {
        self.0.lock().unwrap().append(record)
    }
}

/// Accepts `ok_appends` records, then fails like a full disk.
#[derive(Clone)]
struct FailingSink {
    appends: Arc<AtomicUsize>,
    ok_appends: usize,
    fail_flush: Arc<AtomicBool>,
}

impl TradeSink for FailingSink {
    fn append(&mut self, _record: &TradeRecord) -> io::Result<()> {
        if self.appends.fetch_add(1, Ordering::SeqCst) >= self.ok_appends {
            return Err(io::Error::other("no space left on device"));
        }
        Ok(())
    }

    fn flush(&mut self) -> io::Result<()> {
        if self.fail_flush.load(Ordering::SeqCst) {
            return Err(io::Error::other("no space left on device"));
        }
        Ok(())
    }
}

async fn cross(c: &mut Raw, cid: u64) -> Vec<ServerMsg> {
    c.limit(cid, Side::Sell, 1, 10_000).await;
    c.limit(cid + 1, Side::Buy, 1, 10_000).await;
    c.ack_of(cid + 1).await
}

#[tokio::test]
async fn failed_append_halts_new_orders_but_not_cancels() {
    let sink = FailingSink {
        appends: Arc::default(),
        ok_appends: 2,
        fail_flush: Arc::default(),
    };
    let server = Server::start_with_sink(open_config(), Box::new(sink)).await.unwrap();
    let mut c = Raw::connect(server.addr()).await;
    c.login("t", &["CS1"]).await;
    c.limit(100, Side::Buy, 10, 9_000).await;
    c.ack_of(100).await;
    for cid in [1, 3, 5] {
        cross(&mut c, cid).await;
    }
    // The third trade could not be persisted.
    assert!(server.hub().inspect(|ex| ex.is_halted()).await.unwrap());
    c.limit(10, Side::Buy, 1, 9_000).await;
    assert_eq!(ack(&c.ack_of(10).await).error, Some(ErrorCode::Halted));
    c.cancel(100).await;
    let msgs = c.recv_until(|m| matches!(m, ServerMsg::Report(_))).await;
    match msgs.last().unwrap() {
        ServerMsg::Report(r) => assert_eq!(r.report.kind, ReportKind::Canceled),
        other => panic!("{other:?}"),
    }
    server.shutdown().await.unwrap();
}

#[tokio::test]
async fn failed_flush_halts_new_orders() {
    let fail_flush = Arc::new(AtomicBool::new(false));
    let sink = FailingSink {
        appends: Arc::default(),
        ok_appends: usize::MAX,
        fail_flush: fail_flush.clone(),
    };
    let mut cfg = open_config();
    cfg.flush_interval_ms = 10;
    let server = Server::start_with_sink(cfg, Box::new(sink)).await.unwrap();
    let mut c = Raw::connect(server.addr()).await;
    c.login("t", &["CS1"]).await;
    assert_eq!(ack(&cross(&mut c, 1).await).error, None);
    fail_flush.store(true, Ordering::SeqCst);
    assert!(server.hub().flush().await.unwrap().is_err());
    c.limit(3, Side::Buy, 1, 9_000).await;
    assert_eq!(ack(&c.ack_of(3).await).error, Some(ErrorCode::Halted));
    assert!(server.shutdown().await.is_err(), "the final flush fails too");
}

#[tokio::test]
async fn replayed_quotes_stream_as_the_global_book() {
    let mut cfg = open_config();
    cfg.replay = Some(std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/sample_quotes.csv"));
    // Ten recorded minutes in about a second.
    cfg.time_scale = 600.0;
    let server = Server::start(cfg).await.unwrap();
    let mut c = Raw::connect(server.addr()).await;
    c.login("t", &["CS1"]).await;
    let msgs = c.recv_until(|m| matches!(m, ServerMsg::LastPrice { .. })).await;
    let global = msgs.iter().find_map(|m| match m {
        ServerMsg::BestPrice { best, .. } => best.global.bid,
        _ => None,
    });
    assert!(global.is_some(), "{msgs:?}");

    // A market buy fills against the replayed ask.
    c.market(1, Side::Buy, 10).await;
    let msgs = c
        .recv_until(|m| matches!(m, ServerMsg::Report(r) if r.client_order_id == 1 && r.report.kind.is_fill()))
        .await;
    match msgs.last().unwrap() {
        ServerMsg::Report(r) => {
            assert_eq!(r.report.liquidity_source, lobsim_core::order_book::LiquiditySource::Global)
        }
        other => panic!("{other:?}"),
    }
    server.shutdown().await.unwrap();
}

#[test]
fn shipped_config_loads() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/server.toml");
    let cfg = lobsim_server::ServerConfig::load(&path).unwrap();
    assert_eq!(cfg.symbols[0].p0, Price(10_000));
    assert!(cfg.trade_log.unwrap().ends_with("runs/live/trades.jsonl"));
    assert!(cfg.default_account.is_some());
}
