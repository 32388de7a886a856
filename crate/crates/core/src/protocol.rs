//! Wire messages. Each frame is one JSON object on its own line:
//! `{"seq": 12, "type": "NEW_ORDER", ...}`. Client and server number their
//! own frames independently starting at 1.

use serde::{Deserialize, Serialize};

use crate::exchange::{AccountSnapshot, Ack, BookSnapshot, CancelRequest, ErrorCode, NewOrderRequest, OrderReport, Portfolio};
use crate::order_book::{BestPrices, DepthSnapshot};
use crate::types::{Price, Symbol, Timestamp, TraderId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame<M> {
    pub seq: u64,
    #[serde(flatten)]
    pub msg: M,
}

impl<M> Frame<M> {
    pub fn new(seq: u64, msg: M) -> Frame<M> {
        Frame { seq, msg }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ClientMsg {
    Login {
        trader_id: TraderId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        secret: Option<String>,
    },
    Subscribe {
        symbols: Vec<Symbol>,
    },
    NewOrder(NewOrderRequest),
    Cancel(CancelRequest),
    Logout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ServerMsg {
    /// Login accepted; carries the account snapshot and session settings.
    Welcome {
        account: AccountSnapshot,
        symbols: Vec<Symbol>,
        depth_levels: usize,
    },
    /// Reply to a non-order request (login failure, subscribe, malformed frame).
    Error {
        code: ErrorCode,
        message: String,
    },
    Ack(Ack),
    Report(OrderReport),
    LastPrice {
        symbol: Symbol,
        price: Price,
        size: u64,
        time_us: Timestamp,
    },
    BestPrice {
        symbol: Symbol,
        best: BestPrices,
        time_us: Timestamp,
    },
    Depth {
        symbol: Symbol,
        depth: DepthSnapshot,
        as_of_seq: u64,
    },
    /// Full book state sent once per symbol on subscribe.
    Bootstrap(BookSnapshot),
    Portfolio(Portfolio),
}

pub fn encode<M: Serialize>(frame: &Frame<M>) -> String {
    serde_json::to_string(frame).expect("protocol frames always serialize")
}

pub fn decode<'a, M: Deserialize<'a>>(line: &'a str) -> Result<Frame<M>, serde_json::Error> {
    serde_json::from_str(line)
}
