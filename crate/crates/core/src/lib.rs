//! Exchange core: price-time priority books with global-quote routing,
//! brokerage accounting, the trade log, replay feed parsing and the wire
//! protocol shared by server and clients.

pub mod clock;
pub mod exchange;
pub mod order_book;
pub mod persist;
pub mod protocol;
pub mod replay;
pub mod types;

pub use exchange::{
    AccountSnapshot, Ack, BookSnapshot, CancelRequest, ErrorCode, Exchange, ExchangeConfig, NewOrderRequest, OrderReport,
    Outbound, Portfolio, Position, Request, SymbolConfig,
};
pub use order_book::{
    BestPrices, Book, CancelQty, DepthSnapshot, ExecutionReport, GlobalQuote, LiquiditySource, Order, RejectReason,
    ReportKind, TopOfBook,
};
pub use persist::{TradeRecord, TradeSink};
pub use types::*;
