//! WebSocket front end: one [`WireSession`] per connection, driven by a
//! 60 Hz timer.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use gary_core::engine::Mode;
use gary_core::harness::Passage;
use tokio::net::TcpListener;
use tokio::sync::Semaphore;

use crate::wire::{ServerMessage, WireSession};

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub mode: Mode,
    pub max_sessions: usize,
    /// Where finished session logs are written, if anywhere.
    pub log_dir: Option<PathBuf>,
}

struct Shared {
    passage: Passage,
    opts: ServeOptions,
    slots: Semaphore,
    next_id: AtomicU64,
}

pub fn router(passage: Passage, opts: ServeOptions) -> Router {
    let shared = Arc::new(Shared {
        slots: Semaphore::new(opts.max_sessions),
        passage,
        opts,
        next_id: AtomicU64::new(1),
    });
    Router::new()
        .route("/", get(|| async { "gary session service: connect a WebSocket to /ws\n" }))
        .route("/ws", get(upgrade))
        .with_state(shared)
}

/// Binds and serves until the process is stopped.
pub async fn serve(addr: SocketAddr, passage: Passage, opts: ServeOptions) -> anyhow::Result<()> {
    let listener = TcpListener::bind(addr).await?;
    eprintln!("listening on ws://{}/ws", listener.local_addr()?);
    axum::serve(listener, router(passage, opts)).await?;
    Ok(())
}

async fn upgrade(ws: WebSocketUpgrade, State(shared): State<Arc<Shared>>) -> Response {
    ws.on_upgrade(move |socket| run_connection(socket, shared)).into_response()
}

async fn send_all(socket: &mut WebSocket, msgs: Vec<ServerMessage>) -> bool {
    for m in msgs {
        if socket.send(Message::Text(m.to_json().into())).await.is_err() {
            return false;
        }
    }
    true
}

async fn run_connection(mut socket: WebSocket, shared: Arc<Shared>) {
    let id = format!("s{}", shared.next_id.fetch_add(1, Ordering::Relaxed));
    let Ok(_permit) = shared.slots.try_acquire() else {
        let msg = ServerMessage::Error {
            session_id: id,
            payload: crate::wire::ErrorPayload {
                code: "too_many_sessions".into(),
                message: format!("the server accepts at most {} concurrent sessions", shared.opts.max_sessions),
                fatal: true,
            },
        };
        let _ = send_all(&mut socket, vec![msg]).await;
        let _ = socket.send(Message::Close(None)).await;
        return;
    };
    let mut session = match WireSession::new(id, &shared.passage, shared.opts.mode) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("cannot open session: {e}");
            return;
        }
    };
    if !send_all(&mut socket, session.open()).await {
        return;
    }
    let mut clock = tokio::time::interval(Duration::from_secs_f64(session.frame_ms() / 1000.0));
    clock.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Burst);
    let mut saved = false;
    loop {
        let out = tokio::select! {
            _ = clock.tick() => session.tick(),
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Text(text))) => session.handle_text(text.as_str()),
                Some(Ok(Message::Binary(_))) => session.handle_text("<binary frame>"),
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => Vec::new(),
            },
        };
        let finished = out.iter().any(|m| matches!(m, ServerMessage::Metrics { .. }));
        if !send_all(&mut socket, out).await {
            break;
        }
        if finished && !saved {
            saved = true;
            save_log(&session, &shared.opts);
        }
        if session.is_closed() {
            let _ = socket.send(Message::Close(None)).await;
            break;
        }
    }
    if !saved {
        save_log(&session, &shared.opts);
    }
}

fn save_log(session: &WireSession, opts: &ServeOptions) {
    let Some(dir) = &opts.log_dir else { return };
    let path = dir.join(format!("live-{}-{}.jsonl", opts.mode, session.id()));
    if let Err(e) = std::fs::create_dir_all(dir).and_then(|_| std::fs::write(&path, session.record().to_bytes())) {
        eprintln!("cannot write {}: {e}", path.display());
    }
}
