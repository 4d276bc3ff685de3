//! WebSocket front end for live tracking sessions.
//!
//! Each connection owns one [`Session`]. Text frames are queued in a bounded
//! channel and handled strictly in order by a per-connection worker; a frame
//! that finds the queue full is answered with an error instead of being
//! dropped silently. Every sample is treated as one control tick, whatever
//! its wall-clock spacing.

use std::io;
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use futures_util::{SinkExt, StreamExt};
use jerktrack::predictors::Predictor;
use jerktrack::session::{ServerMessage, Session, SessionConfig};
use tokio::net::TcpListener;
use tokio::sync::mpsc;

pub const DEFAULT_QUEUE_CAPACITY: usize = 64;

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub session: SessionConfig,
    /// Frames waiting per connection before new ones are refused.
    pub queue_capacity: usize,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self { session: SessionConfig::default(), queue_capacity: DEFAULT_QUEUE_CAPACITY }
    }
}

#[derive(Clone)]
struct AppState {
    cfg: Arc<ServeConfig>,
    // read-only template, cloned into every session
    model: Arc<dyn Predictor>,
}

/// Builds the router serving sessions at `/ws`. The configuration and model
/// are checked once here so that bad settings fail at startup.
pub fn router(cfg: ServeConfig, model: Box<dyn Predictor>) -> jerktrack::Result<Router> {
    if cfg.queue_capacity == 0 {
        return Err(jerktrack::Error::InvalidInput("queue capacity must be positive".into()));
    }
    Session::new(cfg.session.clone(), model.clone_box())?;
    let state = AppState { cfg: Arc::new(cfg), model: Arc::from(model) };
    Ok(Router::new().route("/ws", get(upgrade)).with_state(state))
}

/// Serves until the listener fails.
pub async fn serve(listener: TcpListener, cfg: ServeConfig, model: Box<dyn Predictor>) -> io::Result<()> {
    let app = router(cfg, model).map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
    log::info!("serving sessions on ws://{}/ws", listener.local_addr()?);
    axum::serve(listener, app).await
}

async fn upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> Response {
    ws.on_upgrade(move |socket| connection(socket, state))
}

fn to_text(msg: &ServerMessage) -> String {
    serde_json::to_string(msg).expect("server messages always serialize")
}

/// Queues one frame for the worker. Returns the error reply to send when
/// the frame cannot be queued.
pub fn enqueue(queue: &mpsc::Sender<String>, frame: String) -> Option<String> {
    match queue.try_send(frame) {
        Ok(()) => None,
        Err(mpsc::error::TrySendError::Full(_)) => {
            Some(to_text(&ServerMessage::error("input queue full, message refused")))
        }
        Err(mpsc::error::TrySendError::Closed(_)) => Some(to_text(&ServerMessage::error("session closed"))),
    }
}

async fn connection(socket: WebSocket, state: AppState) {
    let (mut sink, mut stream) = socket.split();
    let session = match Session::new(state.cfg.session.clone(), state.model.clone_box()) {
        Ok(s) => s,
        Err(e) => {
            let _ = sink.send(Message::Text(to_text(&ServerMessage::error(e.to_string())).into())).await;
            return;
        }
    };

    let (out_tx, mut out_rx) = mpsc::unbounded_channel::<String>();
    let (in_tx, in_rx) = mpsc::channel::<String>(state.cfg.queue_capacity);
    let worker = tokio::spawn(run_session(session, in_rx, out_tx.clone()));
    let writer = tokio::spawn(async move {
        while let Some(text) = out_rx.recv().await {
            if sink.send(Message::Text(text.into())).await.is_err() {
                break;
            }
        }
        let _ = sink.close().await;
    });

    while let Some(Ok(msg)) = stream.next().await {
        let refused = match msg {
            Message::Text(text) => enqueue(&in_tx, text.to_string()),
            Message::Binary(_) => Some(to_text(&ServerMessage::error("binary frames are not supported"))),
            Message::Close(_) => break,
            _ => None,
        };
        if let Some(reply) = refused {
            let _ = out_tx.send(reply);
        }
    }
    drop(in_tx);
    let _ = worker.await;
    drop(out_tx);
    let _ = writer.await;
}

async fn run_session(mut session: Session, mut inbox: mpsc::Receiver<String>, out: mpsc::UnboundedSender<String>) {
    while let Some(text) = inbox.recv().await {
        if out.send(session.handle_text(&text)).is_err() {
            break;
        }
    }
}
