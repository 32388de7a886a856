//! Client-side view of the market and the account, built by folding server
//! messages in arrival order.

use std::collections::{BTreeMap, HashMap};

use lobsim_core::exchange::{NewOrderRequest, OpenOrderView, Portfolio};
use lobsim_core::order_book::{BestPrices, DepthSnapshot, ReportKind};
use lobsim_core::protocol::ServerMsg;
use lobsim_core::types::{Price, Symbol, Timestamp};

/// A trade print as delivered to the client.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TradePrint {
    pub symbol: Symbol,
    pub price: Price,
    pub size: u64,
    pub time_us: Timestamp,
    /// Server frame number that carried it.
    pub seq: u64,
}

#[derive(Debug, Clone, Default)]
pub struct Cache {
    /// Last server frame applied.
    pub seq: u64,
    pub symbols: Vec<Symbol>,
    pub depth_levels: usize,
    pub last_trade: HashMap<Symbol, TradePrint>,
    pub best: HashMap<Symbol, BestPrices>,
    pub depth: HashMap<Symbol, DepthSnapshot>,
    pub portfolio: Option<Portfolio>,
    /// Live orders by client order id.
    pub open_orders: BTreeMap<u64, OpenOrderView>,
    /// Sent but not yet accepted or refused.
    pub in_flight: HashMap<u64, NewOrderRequest>,
    /// Highest client order id the server has seen from this trader.
    pub max_client_order_id: u64,
}

impl Cache {
    pub fn sent(&mut self, req: NewOrderRequest) {
        self.max_client_order_id = self.max_client_order_id.max(req.client_order_id);
        self.in_flight.insert(req.client_order_id, req);
    }

    pub fn apply(&mut self, seq: u64, msg: &ServerMsg) {
        self.seq = seq;
        match msg {
            ServerMsg::Welcome {
                account,
                symbols,
                depth_levels,
            } => {
                self.symbols = symbols.clone();
                self.depth_levels = *depth_levels;
                self.portfolio = Some(account.portfolio.clone());
                self.open_orders = account
                    .open_orders
                    .iter()
                    .map(|o| (o.client_order_id, o.clone()))
                    .collect();
                self.in_flight.clear();
                self.max_client_order_id = self.max_client_order_id.max(account.max_client_order_id);
            }
            ServerMsg::Bootstrap(b) => {
                self.depth.insert(b.symbol.clone(), b.depth.clone());
                self.best.insert(b.symbol.clone(), b.best);
                // The snapshot carries the price but not the print itself.
                match b.last_price {
                    Some(price) => {
                        self.last_trade.insert(
                            b.symbol.clone(),
                            TradePrint {
                                symbol: b.symbol.clone(),
                                price,
                                size: 0,
                                time_us: 0,
                                seq,
                            },
                        );
                    }
                    None => {
                        self.last_trade.remove(&b.symbol);
                    }
                }
            }
            ServerMsg::LastPrice {
                symbol,
                price,
                size,
                time_us,
            } => {
                self.last_trade.insert(
                    symbol.clone(),
                    TradePrint {
                        symbol: symbol.clone(),
                        price: *price,
                        size: *size,
                        time_us: *time_us,
                        seq,
                    },
                );
            }
            ServerMsg::BestPrice { symbol, best, .. } => {
                self.best.insert(symbol.clone(), *best);
            }
            ServerMsg::Depth { symbol, depth, .. } => {
                self.depth.insert(symbol.clone(), depth.clone());
            }
            ServerMsg::Portfolio(p) => self.portfolio = Some(p.clone()),
            ServerMsg::Ack(ack) => {
                if ack.error.is_some() {
                    self.in_flight.remove(&ack.client_order_id);
                }
            }
            ServerMsg::Report(r) => {
                let cid = r.client_order_id;
                if r.report.leaves == 0 || r.report.kind == ReportKind::Rejected {
                    self.open_orders.remove(&cid);
                    self.in_flight.remove(&cid);
                } else if let Some(open) = self.open_orders.get_mut(&cid) {
                    open.remaining = r.report.leaves;
                } else if let Some(req) = self.in_flight.remove(&cid) {
                    self.open_orders.insert(
                        cid,
                        OpenOrderView {
                            order_id: r.report.order_id,
                            client_order_id: cid,
                            symbol: req.symbol,
                            side: req.side,
                            kind: req.kind,
                            limit_price: req.limit_price,
                            size: req.size,
                            remaining: r.report.leaves,
                        },
                    );
                }
            }
            ServerMsg::Error { .. } => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use lobsim_core::exchange::{Ack, OrderReport};
    use lobsim_core::order_book::{ExecutionReport, LiquiditySource};
    use lobsim_core::types::{OrderId, OrderKind, Side};

    fn report(cid: u64, kind: ReportKind, leaves: u64) -> ServerMsg {
        ServerMsg::Report(OrderReport {
            client_order_id: cid,
            symbol: Symbol::from("A"),
            side: Side::Buy,
            report: ExecutionReport {
                kind,
                order_id: OrderId(cid),
                counter_order_id: None,
                trade_price: None,
                trade_size: 0,
                leaves,
                exec_time: 0,
                liquidity_source: LiquiditySource::Local,
                reject_reason: None,
            },
        })
    }

    fn order(cid: u64, size: u64) -> NewOrderRequest {
        NewOrderRequest {
            client_order_id: cid,
            symbol: Symbol::from("A"),
            side: Side::Buy,
            kind: OrderKind::Limit,
            size,
            limit_price: Some(Price(100)),
        }
    }

    #[test]
    fn open_orders_follow_reports() {
        let mut c = Cache::default();
        c.sent(order(1, 10));
        c.sent(order(2, 5));
        c.sent(order(3, 5));
        c.apply(1, &report(1, ReportKind::Accepted, 10));
        c.apply(2, &report(1, ReportKind::PartialFill, 4));
        c.apply(
            3,
            &ServerMsg::Ack(Ack {
                client_order_id: 2,
                order_id: None,
                arrival_seq: 2,
                error: Some(lobsim_core::exchange::ErrorCode::InsufficientBuyingPower),
            }),
        );
        c.apply(4, &report(3, ReportKind::Accepted, 5));
        c.apply(5, &report(3, ReportKind::Canceled, 0));
        c.sent(order(4, 5));
        c.apply(6, &report(4, ReportKind::Rejected, 5));
        assert_eq!(c.open_orders.keys().copied().collect::<Vec<_>>(), vec![1]);
        assert_eq!(c.open_orders[&1].remaining, 4);
        assert!(c.in_flight.is_empty());
        assert_eq!(c.max_client_order_id, 4);
        assert_eq!(c.seq, 6);
    }

    #[test]
    fn last_price_is_the_latest_print_per_symbol() {
        let mut c = Cache::default();
        let print = |s: &str, p: u64| ServerMsg::LastPrice {
            symbol: Symbol::from(s),
            price: Price(p),
            size: 1,
            time_us: p,
        };
        for (i, m) in [print("A", 1), print("B", 7), print("A", 3)].iter().enumerate() {
            c.apply(i as u64 + 1, m);
        }
        assert_eq!(c.last_trade[&Symbol::from("A")].price, Price(3));
        assert_eq!(c.last_trade[&Symbol::from("A")].seq, 3);
        assert_eq!(c.last_trade[&Symbol::from("B")].price, Price(7));
    }
}
