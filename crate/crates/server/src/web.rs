//! Browser gateway: the session protocol over a websocket at `/ws`, one JSON
//! frame per text message, plus static files for the UI bundle.

use std::path::PathBuf;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use futures::{future, SinkExt, StreamExt};
use tower_http::services::ServeDir;

use crate::hub::Hub;
use crate::session::{self, Inbound};

#[derive(Clone)]
struct WebState {
    hub: Hub,
    capacity: usize,
}

pub(crate) fn router(hub: Hub, capacity: usize, static_dir: Option<PathBuf>) -> Router {
    let router = Router::new()
        .route("/ws", get(upgrade))
        .with_state(WebState { hub, capacity });
    match static_dir {
        Some(dir) => router.fallback_service(ServeDir::new(dir)),
        None => router,
    }
}

async fn upgrade(ws: WebSocketUpgrade, State(state): State<WebState>) -> Response {
    ws.max_message_size(session::MAX_FRAME_BYTES)
        .on_upgrade(move |socket| websocket_session(socket, state))
}

async fn websocket_session(socket: WebSocket, state: WebState) {
    let (tx, rx) = socket.split();
    let incoming = rx.filter_map(|m| {
        future::ready(match m {
            Ok(Message::Text(text)) => Some(Inbound::Line(text.to_string())),
            Ok(Message::Binary(_)) => Some(Inbound::Invalid("send frames as text messages".into())),
            Ok(Message::Close(_)) | Err(_) => Some(Inbound::Closed),
            Ok(Message::Ping(_) | Message::Pong(_)) => None,
        })
    });
    let sink = tx.with(|line: String| future::ready(Ok::<_, axum::Error>(Message::Text(line.into()))));
    session::serve(state.hub, state.capacity, incoming, Box::pin(sink)).await;
}
