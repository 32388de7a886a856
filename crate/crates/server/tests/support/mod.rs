//! A bare line-protocol client for driving the server in tests.

#![allow(dead_code)]

use std::net::SocketAddr;
use std::time::Duration;

use lobsim_core::exchange::{AccountSnapshot, CancelRequest, NewOrderRequest};
use lobsim_core::protocol::{decode, encode, ClientMsg, Frame, ServerMsg};
use lobsim_core::types::{OrderKind, Price, Side, Symbol, TraderId};
use lobsim_server::config::{DefaultAccount, ServerConfig};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader, Lines};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::TcpStream;

pub const WAIT: Duration = Duration::from_secs(10);

/// One symbol, any trader id may log in with $1M and 10,000 shares.
pub fn open_config() -> ServerConfig {
    let mut cfg = ServerConfig::local("CS1", Price(10_000));
    cfg.default_account = Some(DefaultAccount {
        cash: 1_000_000.0,
        shares: [(Symbol::from("CS1"), 10_000)].into_iter().collect(),
    });
    cfg
}

pub struct Raw {
    lines: Lines<BufReader<OwnedReadHalf>>,
    w: OwnedWriteHalf,
    seq: u64,
    /// Last server sequence number seen.
    pub server_seq: u64,
}

impl Raw {
    pub async fn connect(addr: SocketAddr) -> Raw {
        let s = TcpStream::connect(addr).await.unwrap();
        let (r, w) = s.into_split();
        Raw {
            lines: BufReader::new(r).lines(),
            w,
            seq: 0,
            server_seq: 0,
        }
    }

    pub async fn send_line(&mut self, line: &str) {
        self.w.write_all(line.as_bytes()).await.unwrap();
        self.w.write_all(b"\n").await.unwrap();
    }

    pub async fn send(&mut self, msg: ClientMsg) {
        self.seq += 1;
        let line = encode(&Frame::new(self.seq, msg));
        self.send_line(&line).await;
    }

    /// Next frame; panics after the timeout. Checks server numbering.
    pub async fn recv(&mut self) -> ServerMsg {
        self.try_recv().await.expect("connection closed")
    }

    pub async fn try_recv(&mut self) -> Option<ServerMsg> {
        let line = tokio::time::timeout(WAIT, self.lines.next_line())
            .await
            .expect("timed out waiting for a frame")
            .unwrap()?;
        let frame: Frame<ServerMsg> = decode(&line).unwrap_or_else(|e| panic!("{e}: {line}"));
        assert_eq!(frame.seq, self.server_seq + 1, "server frames are numbered consecutively");
        self.server_seq = frame.seq;
        Some(frame.msg)
    }

    /// Receive until `stop` matches; returns everything including the match.
    pub async fn recv_until(&mut self, mut stop: impl FnMut(&ServerMsg) -> bool) -> Vec<ServerMsg> {
        let mut out = Vec::new();
        loop {
            let m = self.recv().await;
            let done = stop(&m);
            out.push(m);
            if done {
                return out;
            }
        }
    }

    pub async fn login(&mut self, trader: &str, symbols: &[&str]) -> AccountSnapshot {
        self.send(ClientMsg::Login {
            trader_id: TraderId::from(trader),
            secret: None,
        })
        .await;
        let account = match self.recv().await {
            ServerMsg::Welcome { account, .. } => account,
            other => panic!("expected WELCOME, got {other:?}"),
        };
        if !symbols.is_empty() {
            self.send(ClientMsg::Subscribe {
                symbols: symbols.iter().map(|s| Symbol::from(*s)).collect(),
            })
            .await;
            for _ in symbols {
                match self.recv().await {
                    ServerMsg::Bootstrap(_) => {}
                    other => panic!("expected BOOTSTRAP, got {other:?}"),
                }
            }
        }
        account
    }

    pub async fn limit(&mut self, cid: u64, side: Side, size: u64, price: u64) {
        self.send(ClientMsg::NewOrder(NewOrderRequest {
            client_order_id: cid,
            symbol: Symbol::from("CS1"),
            side,
            kind: OrderKind::Limit,
            size,
            limit_price: Some(Price(price)),
        }))
        .await;
    }

    pub async fn market(&mut self, cid: u64, side: Side, size: u64) {
        self.send(ClientMsg::NewOrder(NewOrderRequest {
            client_order_id: cid,
            symbol: Symbol::from("CS1"),
            side,
            kind: OrderKind::Market,
            size,
            limit_price: None,
        }))
        .await;
    }

    pub async fn cancel(&mut self, cid: u64) {
        self.send(ClientMsg::Cancel(CancelRequest {
            client_order_id: cid,
            qty: None,
        }))
        .await;
    }

    /// Wait for the ACK of `cid`, returning everything received meanwhile.
    pub async fn ack_of(&mut self, cid: u64) -> Vec<ServerMsg> {
        self.recv_until(|m| matches!(m, ServerMsg::Ack(a) if a.client_order_id == cid)).await
    }
}

pub fn ack(msgs: &[ServerMsg]) -> &lobsim_core::exchange::Ack {
    msgs.iter()
        .rev()
        .find_map(|m| match m {
            ServerMsg::Ack(a) => Some(a),
            _ => None,
        })
        .expect("an ACK")
}
