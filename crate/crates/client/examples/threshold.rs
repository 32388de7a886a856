//! Poll the last price every few seconds. Buy when it drops below a floor,
//! sell when it rises above a ceiling.
//!
//!     cargo run -p lobsim-client --example threshold -- 127.0.0.1:7400 alice CS1 99.50 100.50

use std::time::Duration;

use anyhow::Context;
use lobsim_client::Trader;
use lobsim_core::types::{OrderKind, Price, Side};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let [addr, trader_id, symbol, low, high] = args.as_slice() else {
        anyhow::bail!("usage: threshold <addr> <trader> <symbol> <buy below $> <sell above $>");
    };
    let low = Price::from_dollars(low.parse().context("buy threshold")?);
    let high = Price::from_dollars(high.parse().context("sell threshold")?);

    let trader = Trader::new(trader_id.as_str(), None);
    trader.connect(addr.as_str(), &[symbol.as_str()])?;
    trader.on_execution_report(|_, r| println!("{:?} {} {:?}", r.side, r.client_order_id, r.report.kind));

    for _ in 0..60 {
        std::thread::sleep(Duration::from_secs(5));
        let Some(last) = trader.get_last_price(symbol) else {
            println!("no trades yet");
            continue;
        };
        let held = trader.get_portfolio_item(symbol).shares;
        println!("last {last}, holding {held}, buying power {}", trader.get_buying_power());
        if last < low {
            trader.submit_order(Side::Buy, OrderKind::Market, symbol, 100, None)?;
        } else if last > high && held >= 100 {
            trader.submit_order(Side::Sell, OrderKind::Market, symbol, 100, None)?;
        }
    }
    trader.disconnect();
    Ok(())
}
