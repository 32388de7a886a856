//! Zero-intelligence traders running as ordinary SDK clients on wall time.

mod support;

use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use lobsim_agents::{schedule, Action, MarketView, ZiAgent, ZiParams};
use lobsim_client::Trader;
use lobsim_core::types::{Cash, Price, Symbol, TraderId};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::TestServer;

const SESSION: Duration = Duration::from_secs(2);

fn run_agent(addr: std::net::SocketAddr, name: String, seed: u64) -> Trader {
    let trader = Trader::new(name.clone(), None);
    trader.connect(addr, &["CS1"]).unwrap();
    let portfolio = trader.get_portfolio().unwrap();
    let params = ZiParams {
        sigma: 0.10,
        r_low: 0.2,
        r_high: 0.6,
        p0: Price(10_000),
        fee_per_share: Cash::ZERO,
    };
    let agent = Arc::new(Mutex::new(ZiAgent::new(
        TraderId::from(name.as_str()),
        Symbol::from("CS1"),
        params,
        portfolio.buying_power,
        portfolio.shares(&Symbol::from("CS1")),
    )));
    let a = agent.clone();
    trader.on_ack(move |_, ack| a.lock().unwrap().on_ack(ack));
    let a = agent.clone();
    trader.on_execution_report(move |_, r| a.lock().unwrap().on_report(r));
    let a = agent.clone();
    trader.on_portfolio_updated(move |_, p| a.lock().unwrap().on_portfolio(p));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Twenty wake-ups expected over the session.
    let wakes = schedule(20.0, SESSION.as_secs_f64(), &mut rng);
    let start = Instant::now();
    for due in wakes {
        let due = Duration::from_micros(due);
        thread::sleep(due.saturating_sub(start.elapsed()));
        let best = trader.get_best_price("CS1").map(|b| b.combined).unwrap_or_default();
        let view = MarketView {
            best_bid: best.bid.map(|l| l.price),
            best_ask: best.ask.map(|l| l.price),
            last_price: trader.get_last_price("CS1"),
        };
        let (actions, _) = agent.lock().unwrap().act(due.as_micros() as u64, &view, &mut rng);
        for action in actions {
            match action {
                Action::Cancel(c) => trader.cancel_order(c.client_order_id).unwrap(),
                Action::Submit(req) => {
                    trader.send_order(req).unwrap();
                }
            }
        }
    }
    // Nothing may rest after logout, or later fills would move the account
    // behind this handle's back.
    if let Some(cid) = agent.lock().unwrap().outstanding_order() {
        trader.cancel_order(cid).unwrap();
    }
    trader.disconnect();
    trader
}

#[test]
fn zero_intelligence_traders_trade_through_the_client() {
    let server = TestServer::start(&["CS1"]);
    let addr = server.addr();
    let handles: Vec<_> = (0..20u64)
        .map(|i| thread::spawn(move || run_agent(addr, format!("zi{i:02}"), 100 + i)))
        .collect();
    let traders: Vec<Trader> = handles.into_iter().map(|h| h.join().unwrap()).collect();

    for t in &traders {
        assert_eq!(t.callback_panics(), 0);
        let id = t.trader_id().clone();
        let on_server = server.inspect(move |ex| ex.portfolio(&id).unwrap().clone());
        assert_eq!(t.get_portfolio().unwrap(), on_server, "{} cache matches the server", t.trader_id());
    }
    server.inspect(|ex| ex.check_invariants()).unwrap();
    let recorded = server.finish();
    assert!(recorded.trades.len() > 10, "only {} trades", recorded.trades.len());
}
