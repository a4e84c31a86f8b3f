//! HTTP front end: `/session` web socket and `/healthz`.
//!
//! Each named session owns a tick loop that is the only writer of its
//! state. Clients talk to it through a control queue and receive state
//! messages through a bounded broadcast; a client that falls more than
//! [`CLIENT_BACKLOG`] messages behind is disconnected.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use futures_util::{SinkExt, StreamExt};
use serde::Deserialize;
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc};

use daaria_core::config::Config;
use daaria_core::simulation::{Scenario, ScenarioError};

use crate::session::{ClientMessage, Controls, ServerMessage, Session};

pub const CLIENT_BACKLOG: usize = 64;
pub const DEFAULT_SESSION: &str = "default";
pub const DEFAULT_SCENARIO: &str = "crossing-pedestrian";

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("port {0} is already in use")]
    PortInUse(u16),
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
    #[error("scenario {name:?}: {source}")]
    BadScenario { name: String, source: ScenarioError },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub port: u16,
    pub bind_host: [u8; 4],
    /// Extra scenarios, looked up as `<dir>/<name>.json` before the bundled ones.
    pub scenario_dir: Option<PathBuf>,
    pub default_scenario: String,
    pub config: Config,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            port: 8080,
            bind_host: [127, 0, 0, 1],
            scenario_dir: None,
            default_scenario: DEFAULT_SCENARIO.into(),
            config: Config::default(),
        }
    }
}

impl ServiceConfig {
    pub fn resolve_scenario(&self, name: &str) -> Result<Scenario, ServiceError> {
        if let Some(dir) = &self.scenario_dir {
            let safe = !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
            let path = dir.join(format!("{name}.json"));
            if safe && path.is_file() {
                let text = std::fs::read_to_string(&path)?;
                return Scenario::from_json(&text).map_err(|source| ServiceError::BadScenario {
                    name: name.into(),
                    source,
                });
            }
        }
        Scenario::bundled(name).map_err(|_| ServiceError::UnknownScenario(name.into()))
    }
}

enum Command {
    Client(ClientMessage),
    Reload(Scenario),
}

#[derive(Clone)]
struct SessionHandle {
    commands: mpsc::UnboundedSender<Command>,
    states: broadcast::Sender<String>,
    tick: Arc<AtomicU64>,
}

#[derive(Clone)]
struct AppState {
    cfg: Arc<ServiceConfig>,
    sessions: Arc<Mutex<HashMap<String, SessionHandle>>>,
}

impl AppState {
    fn session(&self, name: &str, scenario: Option<&str>) -> Result<SessionHandle, ServiceError> {
        let mut sessions = self.sessions.lock().expect("session table");
        if let Some(h) = sessions.get(name) {
            return Ok(h.clone());
        }
        let scenario = self.cfg.resolve_scenario(scenario.unwrap_or(&self.cfg.default_scenario))?;
        let h = spawn_session(scenario, self.cfg.config.clone());
        sessions.insert(name.to_string(), h.clone());
        Ok(h)
    }
}

fn tick_period(s: &Scenario) -> Duration {
    Duration::from_secs_f64(1.0 / s.tick_rate)
}

/// Folds the commands queued since the last tick into one set of controls.
/// Later messages win; a queued reload replaces the session first.
fn drain(rx: &mut mpsc::UnboundedReceiver<Command>, session: &mut Session, cfg: &Config) -> (Controls, Vec<ServerMessage>) {
    let mut controls = Controls::default();
    let mut events = Vec::new();
    let mut touched = false;
    while let Ok(cmd) = rx.try_recv() {
        match cmd {
            Command::Client(ClientMessage::Control(c)) => {
                let mode = c.mode.or(controls.mode);
                controls = c;
                controls.mode = mode;
                touched = true;
            }
            Command::Client(ClientMessage::Load { .. }) => {}
            Command::Reload(s) => {
                events.push(ServerMessage::Loaded {
                    scenario: s.name.clone(),
                    seed: s.seed,
                });
                *session = Session::new(s, cfg.clone());
                controls = Controls::default();
                touched = false;
            }
        }
    }
    if !touched {
        // without new input the previous overrides stay in force
        controls = session.current_controls();
    }
    (controls, events)
}

fn spawn_session(scenario: Scenario, cfg: Config) -> SessionHandle {
    let (commands, mut rx) = mpsc::unbounded_channel();
    let (states, _) = broadcast::channel(CLIENT_BACKLOG);
    let tick = Arc::new(AtomicU64::new(0));
    let handle = SessionHandle {
        commands,
        states: states.clone(),
        tick: tick.clone(),
    };
    tokio::spawn(async move {
        let mut session = Session::new(scenario, cfg.clone());
        let mut period = tick_period(session.scenario());
        let mut interval = tokio::time::interval(period);
        interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            interval.tick().await;
            let (controls, events) = drain(&mut rx, &mut session, &cfg);
            for e in events {
                let _ = states.send(e.to_line());
            }
            if tick_period(session.scenario()) != period {
                period = tick_period(session.scenario());
                interval = tokio::time::interval(period);
                interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
            }
            match session.step(&controls) {
                Ok(Some(msg)) => {
                    tick.store(session.tick(), Ordering::Relaxed);
                    // no receivers is fine: the session runs headless
                    let _ = states.send(msg.to_line());
                }
                Ok(None) => {}
                Err(e) => {
                    let _ = states.send(ServerMessage::Error { message: e.to_string() }.to_line());
                }
            }
        }
    });
    handle
}

#[derive(Debug, Deserialize)]
struct SessionQuery {
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    scenario: Option<String>,
}

async fn ws_handler(ws: WebSocketUpgrade, Query(q): Query<SessionQuery>, State(app): State<AppState>) -> Response {
    let name = q.name.unwrap_or_else(|| DEFAULT_SESSION.into());
    match app.session(&name, q.scenario.as_deref()) {
        Ok(handle) => ws.on_upgrade(move |socket| client_loop(socket, handle, app)),
        Err(e) => (StatusCode::NOT_FOUND, e.to_string()).into_response(),
    }
}

async fn client_loop(socket: WebSocket, handle: SessionHandle, app: AppState) {
    let (mut sink, mut stream) = socket.split();
    let mut states = handle.states.subscribe();
    loop {
        tokio::select! {
            msg = states.recv() => match msg {
                Ok(line) => {
                    if sink.send(Message::Text(line.into())).await.is_err() {
                        break;
                    }
                }
                // lagging clients are dropped rather than stalling the session
                Err(broadcast::error::RecvError::Lagged(_)) | Err(broadcast::error::RecvError::Closed) => break,
            },
            incoming = stream.next() => match incoming {
                Some(Ok(Message::Text(text))) => {
                    for line in text.as_str().lines().filter(|l| !l.trim().is_empty()) {
                        let reply = handle_client_line(line, &handle, &app);
                        if let Some(reply) = reply {
                            if sink.send(Message::Text(reply.to_line().into())).await.is_err() {
                                return;
                            }
                        }
                    }
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
        }
    }
    let _ = sink.close().await;
}

/// Returns a message for this client only (errors).
fn handle_client_line(line: &str, handle: &SessionHandle, app: &AppState) -> Option<ServerMessage> {
    let msg: ClientMessage = match serde_json::from_str(line) {
        Ok(m) => m,
        Err(e) => return Some(ServerMessage::Error { message: format!("bad message: {e}") }),
    };
    let cmd = match &msg {
        ClientMessage::Load { scenario, seed } => match app.cfg.resolve_scenario(scenario) {
            Ok(mut s) => {
                if let Some(seed) = seed {
                    s.seed = *seed;
                }
                Command::Reload(s)
            }
            Err(e) => return Some(ServerMessage::Error { message: e.to_string() }),
        },
        ClientMessage::Control(_) => Command::Client(msg),
    };
    let _ = handle.commands.send(cmd);
    None
}

#[derive(Debug, Deserialize)]
struct HealthQuery {
    #[serde(default)]
    name: Option<String>,
}

async fn healthz(Query(q): Query<HealthQuery>, State(app): State<AppState>) -> Response {
    let name = q.name.unwrap_or_else(|| DEFAULT_SESSION.into());
    let tick = app
        .sessions
        .lock()
        .expect("session table")
        .get(&name)
        .map_or(0, |h| h.tick.load(Ordering::Relaxed));
    Json(serde_json::json!({ "tick": tick })).into_response()
}

/// A bound, not yet running server.
pub struct Server {
    listener: TcpListener,
    router: Router,
}

impl Server {
    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub async fn run(self) -> Result<(), ServiceError> {
        axum::serve(self.listener, self.router).await?;
        Ok(())
    }
}

/// Binds the port and starts the default session. Port 0 picks a free port.
pub async fn bind(cfg: ServiceConfig) -> Result<Server, ServiceError> {
    let addr = SocketAddr::from((cfg.bind_host, cfg.port));
    let listener = TcpListener::bind(addr).await.map_err(|e| match e.kind() {
        std::io::ErrorKind::AddrInUse => ServiceError::PortInUse(cfg.port),
        _ => ServiceError::Io(e),
    })?;
    let app = AppState {
        cfg: Arc::new(cfg),
        sessions: Arc::new(Mutex::new(HashMap::new())),
    };
    app.session(DEFAULT_SESSION, None)?;
    let router = Router::new()
        .route("/session", get(ws_handler))
        .route("/healthz", get(healthz))
        .with_state(app);
    Ok(Server { listener, router })
}

pub async fn serve(cfg: ServiceConfig) -> Result<(), ServiceError> {
    bind(cfg).await?.run().await
}
