//! One client connection, independent of transport. The TCP listener and
//! the websocket gateway both adapt their sockets to a stream of text lines
//! in and a sink of text lines out.
//!
//! A reader half turns client frames into sequencer commands. A writer
//! task drains the session's outbox and numbers outgoing frames from 1.

use std::fmt::Display;
use std::sync::Arc;

use futures::{Sink, SinkExt, Stream, StreamExt};
use lobsim_core::exchange::{ErrorCode, Request};
use lobsim_core::protocol::{decode, encode, ClientMsg, Frame, ServerMsg};
use tokio::net::{TcpListener, TcpStream};
use tokio_util::codec::{FramedRead, FramedWrite, LinesCodec, LinesCodecError};
use tokio_util::sync::CancellationToken;

use crate::hub::{Hub, SessionId};
use crate::outbox::{Next, Outbox};

/// Longest accepted client frame, in bytes.
pub const MAX_FRAME_BYTES: usize = 64 * 1024;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Inbound {
    Line(String),
    /// A frame the transport could not deliver as text.
    Invalid(String),
    Closed,
}

pub(crate) async fn serve<S, K>(hub: Hub, capacity: usize, incoming: S, sink: K)
where
    S: Stream<Item = Inbound> + Unpin + Send,
    K: Sink<String> + Unpin + Send + 'static,
    K::Error: Display,
{
    let outbox = Arc::new(Outbox::new(capacity));
    let mut writer = tokio::spawn(write_loop(outbox.clone(), sink));
    let mut reader = Reader {
        hub,
        outbox: outbox.clone(),
        session: None,
        last_seq: 0,
    };
    let reader_finished = tokio::select! {
        _ = reader.run(incoming) => true,
        _ = &mut writer => false,
    };
    if let Some(id) = reader.session.take() {
        let _ = reader.hub.logout(id).await;
    }
    outbox.close();
    if reader_finished {
        let _ = writer.await;
    }
}

async fn write_loop<K>(outbox: Arc<Outbox>, mut sink: K)
where
    K: Sink<String> + Unpin,
    K::Error: Display,
{
    let mut seq = 0;
    loop {
        let msg = match outbox.next().await {
            Next::Msg(m) => m,
            Next::Closed(reason) => {
                if let Some(code) = reason {
                    seq += 1;
                    let msg = ServerMsg::Error {
                        code,
                        message: "too many undelivered messages".into(),
                    };
                    let _ = sink.send(encode(&Frame::new(seq, msg))).await;
                }
                let _ = sink.close().await;
                return;
            }
        };
        seq += 1;
        if let Err(e) = sink.feed(encode(&Frame::new(seq, msg))).await {
            tracing::debug!("session write failed: {e}");
            outbox.close();
            return;
        }
        if outbox.is_empty() {
            if let Err(e) = sink.flush().await {
                tracing::debug!("session flush failed: {e}");
                outbox.close();
                return;
            }
        }
    }
}

struct Reader {
    hub: Hub,
    outbox: Arc<Outbox>,
    session: Option<SessionId>,
    last_seq: u64,
}

impl Reader {
    fn reply(&self, code: ErrorCode, message: impl Into<String>) {
        self.outbox.push(ServerMsg::Error {
            code,
            message: message.into(),
        });
    }

    /// Returns when the peer logs out or goes away, or the exchange stops.
    async fn run<S: Stream<Item = Inbound> + Unpin>(&mut self, mut incoming: S) {
        while let Some(item) = incoming.next().await {
            let line = match item {
                Inbound::Line(l) => l,
                Inbound::Invalid(why) => {
                    self.reply(ErrorCode::Malformed, why);
                    continue;
                }
                Inbound::Closed => return,
            };
            if line.trim().is_empty() {
                continue;
            }
            match self.handle(&line).await {
                Ok(true) => {}
                Ok(false) | Err(_) => return,
            }
        }
    }

    /// Ok(false) ends the session.
    async fn handle(&mut self, line: &str) -> Result<bool, crate::hub::Stopped> {
        let frame = match decode::<ClientMsg>(line) {
            Ok(f) => f,
            Err(e) => {
                self.reply(ErrorCode::Malformed, format!("bad frame: {e}"));
                return Ok(true);
            }
        };
        if frame.seq <= self.last_seq {
            self.reply(
                ErrorCode::Malformed,
                format!("sequence number {} does not follow {}", frame.seq, self.last_seq),
            );
            return Ok(true);
        }
        self.last_seq = frame.seq;
        match frame.msg {
            ClientMsg::Login { trader_id, secret } => {
                if self.session.is_some() {
                    self.reply(ErrorCode::AlreadyLoggedIn, "this connection is already logged in");
                    return Ok(true);
                }
                match self.hub.login(trader_id.clone(), secret, self.outbox.clone()).await? {
                    Ok(id) => self.session = Some(id),
                    Err(code) => self.reply(code, format!("login as {trader_id} refused")),
                }
            }
            ClientMsg::Logout => return Ok(false),
            msg => {
                let Some(id) = self.session else {
                    self.reply(ErrorCode::NotLoggedIn, "log in first");
                    return Ok(true);
                };
                match msg {
                    ClientMsg::Subscribe { symbols } => self.hub.subscribe(id, symbols).await?,
                    ClientMsg::NewOrder(r) => self.hub.request(id, Request::NewOrder(r)).await?,
                    ClientMsg::Cancel(r) => self.hub.request(id, Request::Cancel(r)).await?,
                    ClientMsg::Login { .. } | ClientMsg::Logout => unreachable!("matched above"),
                }
            }
        }
        Ok(true)
    }
}

pub(crate) async fn accept_tcp(listener: TcpListener, hub: Hub, capacity: usize, stop: CancellationToken) {
    loop {
        let stream = tokio::select! {
            r = listener.accept() => match r {
                Ok((stream, peer)) => {
                    tracing::debug!(%peer, "connection");
                    stream
                }
                Err(e) => {
                    tracing::warn!("accept failed: {e}");
                    continue;
                }
            },
            _ = stop.cancelled() => return,
        };
        tokio::spawn(tcp_session(stream, hub.clone(), capacity));
    }
}

async fn tcp_session(stream: TcpStream, hub: Hub, capacity: usize) {
    let _ = stream.set_nodelay(true);
    let (r, w) = stream.into_split();
    let incoming = FramedRead::new(r, LinesCodec::new_with_max_length(MAX_FRAME_BYTES)).map(|item| match item {
        Ok(line) => Inbound::Line(line),
        Err(LinesCodecError::MaxLineLengthExceeded) => {
            Inbound::Invalid(format!("frame longer than {MAX_FRAME_BYTES} bytes"))
        }
        Err(LinesCodecError::Io(_)) => Inbound::Closed,
    });
    let sink = FramedWrite::new(w, LinesCodec::new());
    serve(hub, capacity, incoming, sink).await;
}
