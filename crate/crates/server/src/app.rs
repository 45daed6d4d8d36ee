use std::collections::HashMap;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use serde::{Deserialize, Serialize};
use teamcook::env::{shipped_layout, Action};
use tokio::net::TcpListener;
use tokio::sync::mpsc::{unbounded_channel, UnboundedReceiver, UnboundedSender};
use tokio::time::Instant;

use crate::wire::{ClientMessage, ErrorCode, ServerMessage};
use crate::{CheckpointStore, ClientId, Outbound, Recipient, Session, SessionConfig, SessionError, SessionStatus};

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub host: IpAddr,
    pub port: u16,
    pub checkpoint_dir: PathBuf,
    pub replay_dir: PathBuf,
    /// `None` waits for humans indefinitely.
    pub step_timeout: Option<Duration>,
}

impl ServeConfig {
    pub fn new(port: u16, checkpoint_dir: impl Into<PathBuf>, replay_dir: impl Into<PathBuf>) -> Self {
        ServeConfig {
            host: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port,
            checkpoint_dir: checkpoint_dir.into(),
            replay_dir: replay_dir.into(),
            step_timeout: None,
        }
    }
}

/// Body of `POST /sessions`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub layout: String,
    /// Defaults to the number of slots.
    #[serde(default)]
    pub n: Option<usize>,
    /// One binding per slot, e.g. `["human", "policy:student.ckpt"]`.
    pub slots: Vec<String>,
    #[serde(default)]
    pub seed: u64,
    /// Overrides the server default; `0` disables the timeout.
    #[serde(default)]
    pub step_timeout_ms: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
struct Summary {
    id: String,
    layout: String,
    slots: Vec<String>,
    status: SessionStatus,
    step: u32,
}

enum Command {
    Join {
        client: ClientId,
        slot: Option<usize>,
        tx: UnboundedSender<ServerMessage>,
    },
    Action {
        client: ClientId,
        step: u32,
        slot: usize,
        action: Action,
    },
    Leave(ClientId),
    Stop,
}

struct Handle {
    tx: UnboundedSender<Command>,
    summary: Arc<Mutex<Summary>>,
}

struct Inner {
    store: CheckpointStore,
    replay_dir: PathBuf,
    step_timeout: Option<Duration>,
    sessions: Mutex<HashMap<String, Handle>>,
    next_session: AtomicU64,
    next_client: AtomicU64,
}

/// Shared server state: checkpoints and the session registry.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    pub fn new(cfg: &ServeConfig) -> Self {
        AppState {
            inner: Arc::new(Inner {
                store: CheckpointStore::new(&cfg.checkpoint_dir),
                replay_dir: cfg.replay_dir.clone(),
                step_timeout: cfg.step_timeout,
                sessions: Mutex::default(),
                next_session: AtomicU64::new(1),
                next_client: AtomicU64::new(1),
            }),
        }
    }

    /// Create a session in the lobby and start its owner task. Returns the id.
    pub fn create_session(&self, req: &CreateSession) -> Result<String, SessionError> {
        let layout = shipped_layout(&req.layout).ok_or_else(|| SessionError::UnknownLayout(req.layout.clone()))?;
        let n = req.n.unwrap_or(req.slots.len());
        let bindings = req
            .slots
            .iter()
            .map(|s| self.inner.store.binding(s, &layout, n))
            .collect::<Result<Vec<_>, _>>()?;
        let id = format!("s{}", self.inner.next_session.fetch_add(1, Ordering::Relaxed));
        let session = Session::create(
            id.clone(),
            SessionConfig {
                layout: req.layout.clone(),
                n,
                seed: req.seed,
                bindings,
                replay_dir: Some(self.inner.replay_dir.clone()),
            },
        )?;
        let timeout = match req.step_timeout_ms {
            Some(0) => None,
            Some(ms) => Some(Duration::from_millis(ms)),
            None => self.inner.step_timeout,
        };
        let summary = Arc::new(Mutex::new(summarize(&session, &req.slots)));
        let (tx, rx) = unbounded_channel();
        tokio::spawn(drive(session, rx, Arc::clone(&summary), timeout));
        self.inner
            .sessions
            .lock()
            .expect("session registry poisoned")
            .insert(id.clone(), Handle { tx, summary });
        Ok(id)
    }

    fn sender(&self, id: &str) -> Option<UnboundedSender<Command>> {
        self.inner
            .sessions
            .lock()
            .expect("session registry poisoned")
            .get(id)
            .map(|h| h.tx.clone())
    }

    /// Administrative stop; `false` for an unknown session.
    pub fn stop_session(&self, id: &str) -> bool {
        self.sender(id).is_some_and(|tx| tx.send(Command::Stop).is_ok())
    }

    fn summaries(&self) -> Vec<Summary> {
        let sessions = self.inner.sessions.lock().expect("session registry poisoned");
        let mut out: Vec<Summary> = sessions
            .values()
            .map(|h| h.summary.lock().expect("summary poisoned").clone())
            .collect();
        out.sort_by(|a, b| a.id.cmp(&b.id));
        out
    }
}

fn summarize(session: &Session, slots: &[String]) -> Summary {
    Summary {
        id: session.id().into(),
        layout: session.state().layout().name.clone(),
        slots: slots.to_vec(),
        status: session.status(),
        step: session.step_index(),
    }
}

/// The session's single owner: applies commands in arrival order.
async fn drive(
    mut session: Session,
    mut rx: UnboundedReceiver<Command>,
    summary: Arc<Mutex<Summary>>,
    timeout: Option<Duration>,
) {
    let mut clients: HashMap<ClientId, UnboundedSender<ServerMessage>> = HashMap::new();
    let mut deadline: Option<(u32, Instant)> = None;
    loop {
        deadline = match timeout {
            Some(d) if session.status() == SessionStatus::Running => match deadline {
                Some((step, at)) if step == session.step_index() => Some((step, at)),
                _ => Some((session.step_index(), Instant::now() + d)),
            },
            _ => None,
        };
        let sleep = async {
            match deadline {
                Some((_, at)) => tokio::time::sleep_until(at).await,
                None => std::future::pending().await,
            }
        };
        let out: Vec<Outbound> = tokio::select! {
            cmd = rx.recv() => {
                let Some(cmd) = cmd else { break };
                apply(&mut session, &mut clients, cmd)
            }
            () = sleep => {
                let step = deadline.expect("armed").0;
                session.timeout(step).unwrap_or_else(|r| vec![broadcast(r.into_message())])
            }
        };
        for o in out {
            let targets = match o.to {
                Recipient::All => session.audience(),
                Recipient::Client(c) => vec![c],
            };
            for c in targets {
                if let Some(tx) = clients.get(&c) {
                    let _ = tx.send(o.msg.clone());
                }
            }
        }
        let mut s = summary.lock().expect("summary poisoned");
        s.status = session.status();
        s.step = session.step_index();
    }
}

fn broadcast(msg: ServerMessage) -> Outbound {
    Outbound { to: Recipient::All, msg }
}

fn apply(session: &mut Session, clients: &mut HashMap<ClientId, UnboundedSender<ServerMessage>>, cmd: Command) -> Vec<Outbound> {
    let (client, result) = match cmd {
        Command::Join { client, slot, tx } => {
            clients.insert(client, tx);
            (client, session.join(client, slot))
        }
        Command::Action {
            client,
            step,
            slot,
            action,
        } => (client, session.submit(client, step, slot, action)),
        Command::Leave(client) => {
            session.leave(client);
            clients.remove(&client);
            return Vec::new();
        }
        Command::Stop => return session.stop().unwrap_or_else(|r| vec![broadcast(r.into_message())]),
    };
    result.unwrap_or_else(|r| {
        vec![Outbound {
            to: Recipient::Client(client),
            msg: r.into_message(),
        }]
    })
}

fn error_response(status: StatusCode, code: ErrorCode, message: String) -> Response {
    (status, Json(ServerMessage::error(code, message))).into_response()
}

async fn create_handler(State(app): State<AppState>, Json(req): Json<CreateSession>) -> Response {
    match app.create_session(&req) {
        Ok(id) => (StatusCode::CREATED, Json(serde_json::json!({ "session": id }))).into_response(),
        Err(e) => error_response(StatusCode::BAD_REQUEST, ErrorCode::InvalidSession, e.to_string()),
    }
}

async fn list_handler(State(app): State<AppState>) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "sessions": app.summaries() }))
}

async fn stop_handler(State(app): State<AppState>, Path(id): Path<String>) -> Response {
    if app.stop_session(&id) {
        Json(serde_json::json!({ "stopped": id })).into_response()
    } else {
        error_response(StatusCode::NOT_FOUND, ErrorCode::UnknownSession, format!("no session {id}"))
    }
}

async fn ws_handler(State(app): State<AppState>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| client_loop(app, socket))
}

async fn client_loop(app: AppState, socket: WebSocket) {
    let client = app.inner.next_client.fetch_add(1, Ordering::Relaxed);
    let (mut sink, mut stream) = socket.split();
    let (tx, mut rx) = unbounded_channel::<ServerMessage>();
    let writer = tokio::spawn(async move {
        while let Some(m) = rx.recv().await {
            if sink.send(Message::Text(m.to_json().into())).await.is_err() {
                break;
            }
        }
    });
    let mut joined: Option<UnboundedSender<Command>> = None;
    while let Some(Ok(msg)) = stream.next().await {
        let text = match msg {
            Message::Text(t) => t,
            Message::Close(_) => break,
            _ => continue,
        };
        let reply = match serde_json::from_str::<ClientMessage>(&text) {
            Err(e) => Some(ServerMessage::error(ErrorCode::BadMessage, e.to_string())),
            Ok(ClientMessage::Join { session, slot }) => match app.sender(&session) {
                None => Some(ServerMessage::error(ErrorCode::UnknownSession, format!("no session {session}"))),
                Some(h) => {
                    if let Some(prev) = joined.take() {
                        let _ = prev.send(Command::Leave(client));
                    }
                    let _ = h.send(Command::Join {
                        client,
                        slot,
                        tx: tx.clone(),
                    });
                    joined = Some(h);
                    None
                }
            },
            Ok(ClientMessage::Action { step, slot, action }) => match &joined {
                None => Some(ServerMessage::error(ErrorCode::NotJoined, "join a session first")),
                Some(h) => {
                    let _ = h.send(Command::Action {
                        client,
                        step,
                        slot,
                        action,
                    });
                    None
                }
            },
        };
        if let Some(r) = reply {
            let _ = tx.send(r);
        }
    }
    if let Some(h) = joined {
        let _ = h.send(Command::Leave(client));
    }
    drop(tx);
    writer.abort();
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_handler).get(list_handler))
        .route("/sessions/{id}/stop", post(stop_handler))
        .route("/ws", get(ws_handler))
        .with_state(state)
}

/// Bind and serve until the process ends.
pub async fn serve(cfg: ServeConfig) -> std::io::Result<()> {
    if !cfg.checkpoint_dir.is_dir() {
        return Err(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("checkpoint directory {} not found", cfg.checkpoint_dir.display()),
        ));
    }
    let listener = TcpListener::bind(SocketAddr::new(cfg.host, cfg.port)).await?;
    tracing::info!(addr = %listener.local_addr()?, "serving");
    axum::serve(listener, router(AppState::new(&cfg))).await
}
