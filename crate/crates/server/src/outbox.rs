//! Per-session outgoing queue.
//!
//! Messages leave in the order they were pushed. The one exception is depth:
//! a newer DEPTH message for a symbol replaces one still waiting, and takes
//! the newer message's place in line, so a snapshot is never delivered ahead
//! of the prints that produced it. Everything else is delivered exactly.
//! When more than `capacity` of those messages are waiting the session is
//! cut off as a slow consumer.

use std::collections::{HashMap, VecDeque};
use std::sync::Mutex;

use lobsim_core::exchange::ErrorCode;
use lobsim_core::protocol::ServerMsg;
use lobsim_core::types::Symbol;
use tokio::sync::Notify;

#[derive(Debug)]
enum Slot {
    Msg(ServerMsg),
    /// Stale unless the generation matches the pending depth for the symbol.
    Depth(Symbol, u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Open,
    /// Deliver what is queued, then stop.
    Draining,
    Overflowed,
}

#[derive(Debug)]
struct Inner {
    queue: VecDeque<Slot>,
    depth: HashMap<Symbol, (u64, ServerMsg)>,
    generation: u64,
    /// Queued slots that are not depth placeholders.
    exact: usize,
    state: State,
}

impl Inner {
    /// Drop stale depth placeholders once they outnumber the live slots.
    fn compact(&mut self) {
        let live = self.exact + self.depth.len();
        if self.queue.len() > 2 * live + 64 {
            let depth = &self.depth;
            self.queue.retain(|slot| match slot {
                Slot::Msg(_) => true,
                Slot::Depth(s, g) => depth.get(s).is_some_and(|(live, _)| live == g),
            });
        }
    }
}

#[derive(Debug, PartialEq)]
pub enum Next {
    Msg(ServerMsg),
    /// Nothing more will come. Carries the reason when the session was cut off.
    Closed(Option<ErrorCode>),
}

#[derive(Debug)]
pub struct Outbox {
    inner: Mutex<Inner>,
    notify: Notify,
    capacity: usize,
}

impl Outbox {
    pub fn new(capacity: usize) -> Outbox {
        Outbox {
            inner: Mutex::new(Inner {
                queue: VecDeque::new(),
                depth: HashMap::new(),
                generation: 0,
                exact: 0,
                state: State::Open,
            }),
            notify: Notify::new(),
            capacity,
        }
    }

    /// Queue a message. Returns false once the outbox no longer accepts
    /// messages (closed, or overflowed by this push).
    pub fn push(&self, msg: ServerMsg) -> bool {
        let mut inner = self.inner.lock().expect("outbox lock");
        if inner.state != State::Open {
            return false;
        }
        if let ServerMsg::Depth { symbol, .. } = &msg {
            let symbol = symbol.clone();
            inner.generation += 1;
            let g = inner.generation;
            inner.depth.insert(symbol.clone(), (g, msg));
            inner.queue.push_back(Slot::Depth(symbol, g));
            inner.compact();
        } else {
            if inner.exact >= self.capacity {
                inner.state = State::Overflowed;
                inner.queue.clear();
                inner.depth.clear();
                inner.exact = 0;
                drop(inner);
                self.notify.notify_one();
                return false;
            }
            inner.exact += 1;
            inner.queue.push_back(Slot::Msg(msg));
        }
        drop(inner);
        self.notify.notify_one();
        true
    }

    /// Stop accepting messages; the reader still gets what is queued.
    pub fn close(&self) {
        let mut inner = self.inner.lock().expect("outbox lock");
        if inner.state == State::Open {
            inner.state = State::Draining;
        }
        drop(inner);
        self.notify.notify_one();
    }

    pub fn is_open(&self) -> bool {
        self.inner.lock().expect("outbox lock").state == State::Open
    }

    /// Nothing deliverable is queued.
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Deliverable messages queued.
    pub fn len(&self) -> usize {
        let inner = self.inner.lock().expect("outbox lock");
        inner.exact + inner.depth.len()
    }

    /// The next message without waiting, if one is queued.
    pub fn try_next(&self) -> Option<Next> {
        let mut inner = self.inner.lock().expect("outbox lock");
        if inner.state == State::Overflowed {
            return Some(Next::Closed(Some(ErrorCode::SlowConsumer)));
        }
        loop {
            return match inner.queue.pop_front() {
                Some(Slot::Msg(m)) => {
                    inner.exact -= 1;
                    Some(Next::Msg(m))
                }
                Some(Slot::Depth(symbol, g)) => {
                    if inner.depth.get(&symbol).is_none_or(|(live, _)| *live != g) {
                        continue;
                    }
                    let (_, msg) = inner.depth.remove(&symbol).expect("checked above");
                    Some(Next::Msg(msg))
                }
                None if inner.state == State::Draining => Some(Next::Closed(None)),
                None => None,
            };
        }
    }

    /// Wait for the next message. Only one task should consume an outbox.
    pub async fn next(&self) -> Next {
        loop {
            if let Some(n) = self.try_next() {
                return n;
            }
            self.notify.notified().await;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use lobsim_core::order_book::DepthSnapshot;
    use lobsim_core::types::{Price, PriceLevel};

    fn depth(symbol: &str, seq: u64) -> ServerMsg {
        ServerMsg::Depth {
            symbol: Symbol::from(symbol),
            depth: DepthSnapshot {
                bids: vec![PriceLevel::new(Price(seq), 1)],
                asks: vec![],
            },
            as_of_seq: seq,
        }
    }

    fn last(seq: u64) -> ServerMsg {
        ServerMsg::LastPrice {
            symbol: Symbol::from("A"),
            price: Price(seq),
            size: 1,
            time_us: seq,
        }
    }

    fn drain(o: &Outbox) -> Vec<ServerMsg> {
        let mut out = Vec::new();
        while let Some(Next::Msg(m)) = o.try_next() {
            out.push(m);
        }
        out
    }

    #[test]
    fn depth_conflates_to_the_latest_and_prices_do_not() {
        let o = Outbox::new(100);
        o.push(last(1));
        o.push(depth("A", 2));
        o.push(last(3));
        o.push(depth("B", 4));
        o.push(depth("A", 5));
        o.push(last(6));
        assert_eq!(drain(&o), vec![last(1), last(3), depth("B", 4), depth("A", 5), last(6)]);
        // Once delivered, the next depth update is queued fresh.
        o.push(depth("A", 7));
        assert_eq!(drain(&o), vec![depth("A", 7)]);
    }

    #[test]
    fn stale_placeholders_are_compacted() {
        let o = Outbox::new(10);
        for i in 0..10_000 {
            o.push(depth("A", i));
        }
        assert_eq!(o.len(), 1);
        assert!(o.inner.lock().unwrap().queue.len() < 200);
        assert_eq!(drain(&o), vec![depth("A", 9_999)]);
    }

    #[test]
    fn overflow_cuts_the_session() {
        let o = Outbox::new(3);
        for i in 0..3 {
            assert!(o.push(last(i)));
        }
        // Depth never counts toward the limit.
        assert!(o.push(depth("A", 1)));
        assert!(!o.push(last(9)));
        assert_eq!(o.try_next(), Some(Next::Closed(Some(ErrorCode::SlowConsumer))));
        assert!(!o.push(last(10)));
    }

    #[test]
    fn close_drains_then_ends() {
        let o = Outbox::new(10);
        o.push(last(1));
        o.close();
        assert!(!o.push(last(2)));
        assert_eq!(o.try_next(), Some(Next::Msg(last(1))));
        assert_eq!(o.try_next(), Some(Next::Closed(None)));
    }

    #[tokio::test]
    async fn next_wakes_on_push() {
        let o = std::sync::Arc::new(Outbox::new(10));
        let o2 = o.clone();
        let t = tokio::spawn(async move { o2.next().await });
        tokio::task::yield_now().await;
        o.push(last(4));
        assert_eq!(t.await.unwrap(), Next::Msg(last(4)));
    }
}
