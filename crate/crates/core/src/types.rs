//! Domain primitives shared by every part of the exchange.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Simulation timestamp in microseconds.
pub type Timestamp = u64;

pub const MICROS_PER_SECOND: u64 = 1_000_000;

/// A price expressed as an exact number of ticks. One tick is $0.01.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Price(pub u64);

impl Price {
    pub const TICKS_PER_DOLLAR: u64 = 100;

    pub fn ticks(self) -> u64 {
        self.0
    }

    pub fn dollars(self) -> f64 {
        self.0 as f64 / Self::TICKS_PER_DOLLAR as f64
    }

    /// Nearest tick to a dollar amount. Negative inputs clamp to zero.
    pub fn from_dollars(dollars: f64) -> Price {
        let ticks = (dollars * Self::TICKS_PER_DOLLAR as f64).round();
        Price(if ticks > 0.0 { ticks as u64 } else { 0 })
    }

    /// Cash value of `shares` at this price.
    pub fn notional(self, shares: u64) -> Cash {
        Cash(self.0 as i64 * shares as i64 * Cash::UNITS_PER_CENT)
    }
}

impl fmt::Display for Price {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:02}", self.0 / 100, self.0 % 100)
    }
}

/// Cash amount in units of $0.0001 (a hundredth of a cent).
///
/// One price tick times one share is exactly 100 units, and the default
/// per-share fee is exactly one unit, so every account movement is an integer.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Cash(pub i64);

impl Cash {
    pub const UNITS_PER_CENT: i64 = 100;
    pub const UNITS_PER_DOLLAR: i64 = 10_000;
    pub const ZERO: Cash = Cash(0);

    pub fn from_cents(cents: i64) -> Cash {
        Cash(cents * Self::UNITS_PER_CENT)
    }

    pub fn from_dollars(dollars: f64) -> Cash {
        Cash((dollars * Self::UNITS_PER_DOLLAR as f64).round() as i64)
    }

    pub fn units(self) -> i64 {
        self.0
    }

    pub fn cents(self) -> f64 {
        self.0 as f64 / Self::UNITS_PER_CENT as f64
    }

    pub fn dollars(self) -> f64 {
        self.0 as f64 / Self::UNITS_PER_DOLLAR as f64
    }

    pub fn times(self, n: u64) -> Cash {
        Cash(self.0 * n as i64)
    }
}

impl std::ops::Add for Cash {
    type Output = Cash;
    fn add(self, rhs: Cash) -> Cash {
        Cash(self.0 + rhs.0)
    }
}

impl std::ops::Sub for Cash {
    type Output = Cash;
    fn sub(self, rhs: Cash) -> Cash {
        Cash(self.0 - rhs.0)
    }
}

impl std::ops::AddAssign for Cash {
    fn add_assign(&mut self, rhs: Cash) {
        self.0 += rhs.0;
    }
}

impl std::ops::SubAssign for Cash {
    fn sub_assign(&mut self, rhs: Cash) {
        self.0 -= rhs.0;
    }
}

impl std::iter::Sum for Cash {
    fn sum<I: Iterator<Item = Cash>>(iter: I) -> Cash {
        Cash(iter.map(|c| c.0).sum())
    }
}

impl fmt::Display for Cash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "${:.4}", self.dollars())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Side {
    Buy,
    Sell,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Buy => Side::Sell,
            Side::Sell => Side::Buy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum OrderKind {
    Limit,
    Market,
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct OrderId(pub u64);

impl fmt::Display for OrderId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TraderId(pub String);

impl TraderId {
    pub fn new(name: impl Into<String>) -> TraderId {
        TraderId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TraderId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for TraderId {
    fn from(s: &str) -> TraderId {
        TraderId(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Symbol(pub String);

impl Symbol {
    pub fn new(name: impl Into<String>) -> Symbol {
        Symbol(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Symbol {
    fn from(s: &str) -> Symbol {
        Symbol(s.to_string())
    }
}

/// An aggregated price level: price and total resting size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriceLevel {
    pub price: Price,
    pub size: u64,
}

impl PriceLevel {
    pub fn new(price: Price, size: u64) -> PriceLevel {
        PriceLevel { price, size }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn price_display_and_dollars() {
        assert_eq!(Price(10_003).to_string(), "100.03");
        assert_eq!(Price(5).to_string(), "0.05");
        assert_eq!(Price::from_dollars(99.99), Price(9_999));
        assert_eq!(Price::from_dollars(-1.0), Price(0));
        assert!((Price(10_003).dollars() - 100.03).abs() < 1e-12);
    }

    #[test]
    fn notional_is_exact() {
        // $100.00 x 100 shares = $10,000
        assert_eq!(Price(10_000).notional(100), Cash::from_dollars(10_000.0));
        assert_eq!(Price(1).notional(1), Cash::from_cents(1));
    }
}
