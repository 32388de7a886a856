//! Zero-intelligence traders as live clients, one handle and thread each.
//! With no address, or `-`, an exchange is started in-process.
//!
//!     cargo run -p lobsim-client --example live_agents -- [addr|-] [traders] [seconds]

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use lobsim_agents::{schedule, Action, MarketView, ZiAgent, ZiParams};
use lobsim_client::Trader;
use lobsim_core::types::{Cash, Price, Symbol};
use lobsim_server::config::DefaultAccount;
use lobsim_server::{Server, ServerConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SYMBOL: &str = "CS1";

fn trade(addr: SocketAddr, id: usize, session: Duration) -> anyhow::Result<()> {
    let trader = Trader::new(format!("zi{id:03}"), None);
    trader.connect(addr, &[SYMBOL])?;
    let p = trader.get_portfolio().expect("set at login");
    let params = ZiParams {
        sigma: 0.10,
        r_low: 0.2,
        r_high: 0.6,
        p0: Price(10_000),
        fee_per_share: Cash::ZERO,
    };
    let agent = ZiAgent::new(
        trader.trader_id().clone(),
        Symbol::from(SYMBOL),
        params,
        p.buying_power,
        p.shares(&Symbol::from(SYMBOL)),
    );
    let agent = Arc::new(Mutex::new(agent));
    let a = agent.clone();
    trader.on_ack(move |_, ack| a.lock().unwrap().on_ack(ack));
    let a = agent.clone();
    trader.on_execution_report(move |_, r| a.lock().unwrap().on_report(r));
    let a = agent.clone();
    trader.on_portfolio_updated(move |_, p| a.lock().unwrap().on_portfolio(p));

    let mut rng = ChaCha8Rng::seed_from_u64(id as u64);
    // About one decision every two seconds.
    let start = Instant::now();
    for due in schedule(session.as_secs_f64() / 2.0, session.as_secs_f64(), &mut rng) {
        let due = Duration::from_micros(due);
        thread::sleep(due.saturating_sub(start.elapsed()));
        let best = trader.get_best_price(SYMBOL).map(|b| b.combined).unwrap_or_default();
        let view = MarketView {
            best_bid: best.bid.map(|l| l.price),
            best_ask: best.ask.map(|l| l.price),
            last_price: trader.get_last_price(SYMBOL),
        };
        let (actions, _) = agent.lock().unwrap().act(due.as_micros() as u64, &view, &mut rng);
        for action in actions {
            match action {
                Action::Cancel(c) => trader.cancel_order(c.client_order_id)?,
                Action::Submit(req) => {
                    trader.send_order(req)?;
                }
            }
        }
    }
    trader.disconnect();
    Ok(())
}

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let addr: Option<SocketAddr> = args.next().filter(|a| a != "-").map(|a| a.parse()).transpose()?;
    let traders: usize = args.next().map(|n| n.parse()).transpose()?.unwrap_or(50);
    let session = Duration::from_secs(args.next().map(|n| n.parse()).transpose()?.unwrap_or(30));

    let runtime = tokio::runtime::Runtime::new()?;
    let local = match addr {
        Some(_) => None,
        None => {
            let mut cfg = ServerConfig::local(SYMBOL, Price(10_000));
            cfg.default_account = Some(DefaultAccount {
                cash: 100_000.0,
                shares: [(Symbol::from(SYMBOL), 1_000)].into_iter().collect(),
            });
            Some(runtime.block_on(Server::start(cfg))?)
        }
    };
    let addr = addr.unwrap_or_else(|| local.as_ref().expect("started above").addr());
    println!("{traders} traders on {addr} for {} s", session.as_secs());

    let watcher = Trader::new("watcher", None);
    watcher.connect(addr, &[SYMBOL])?;
    let trades = Arc::new(Mutex::new(0u64));
    let count = trades.clone();
    watcher.on_last_price_updated(SYMBOL, move |_, print| {
        *count.lock().unwrap() += 1;
        println!("{} x {}", print.price, print.size);
    });

    let handles: Vec<_> = (0..traders).map(|i| thread::spawn(move || trade(addr, i, session))).collect();
    for h in handles {
        h.join().expect("trader thread")?;
    }
    watcher.disconnect();
    println!("{} trades", trades.lock().unwrap());
    if let Some(server) = local {
        runtime.block_on(server.shutdown())?;
    }
    Ok(())
}
