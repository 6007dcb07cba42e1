//! HTTP listener, WebSocket sessions and the per-session render loop.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use base64::Engine;
use futures_util::{SinkExt, StreamExt};
use thurston_core::bundled;
use thurston_core::render::ImageGrid;
use tokio::net::TcpListener;
use tokio::sync::mpsc;

use crate::protocol::{error_code, resolve_config, CameraPose, ClientMessage, ServerMessage};
use crate::session::{Quality, Session};

#[derive(Clone, Default)]
struct AppState {
    next_session: Arc<AtomicU64>,
}

pub fn router() -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/session", get(upgrade))
        .route("/", get(|| async { "thurston exploration service: connect a WebSocket to /session\n" }))
        .with_state(AppState::default())
}

pub async fn serve(listener: TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router()).await
}

pub fn serve_blocking(port: u16) -> std::io::Result<()> {
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = TcpListener::bind(SocketAddr::from(([0, 0, 0, 0], port))).await?;
        println!("listening={}", listener.local_addr()?);
        serve(listener).await
    })
}

async fn upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| run_socket(socket, state))
}

/// Inbox items: parsed messages, or the text of a message that failed to parse.
type Inbox = mpsc::UnboundedReceiver<Result<ClientMessage, String>>;

async fn run_socket(socket: WebSocket, state: AppState) {
    let (mut sink, mut stream) = socket.split();
    let (in_tx, in_rx) = mpsc::unbounded_channel();
    let (out_tx, mut out_rx) = mpsc::unbounded_channel::<String>();
    let reader = tokio::spawn(async move {
        while let Some(Ok(msg)) = stream.next().await {
            let parsed = match msg {
                Message::Text(t) => serde_json::from_str::<ClientMessage>(&t).map_err(|e| e.to_string()),
                Message::Close(_) => break,
                _ => continue,
            };
            if in_tx.send(parsed).is_err() {
                break;
            }
        }
    });
    let writer = tokio::spawn(async move {
        while let Some(text) = out_rx.recv().await {
            if sink.send(Message::Text(text.into())).await.is_err() {
                break;
            }
        }
        let _ = sink.close().await;
    });
    SessionActor::new(state, out_tx).run(in_rx).await;
    reader.abort();
    let _ = writer.await;
}

/// Owns one session and processes its inbox strictly in order.
struct SessionActor {
    state: AppState,
    out: mpsc::UnboundedSender<String>,
    session: Option<Arc<Session>>,
    next_frame: u64,
    /// The last full frame, re-sent verbatim while the camera is unchanged.
    cached_full: Option<String>,
    /// A full-quality frame is owed for the current camera.
    pending_full: bool,
}

impl SessionActor {
    fn new(state: AppState, out: mpsc::UnboundedSender<String>) -> Self {
        SessionActor {
            state,
            out,
            session: None,
            next_frame: 1,
            cached_full: None,
            pending_full: false,
        }
    }

    fn send(&self, msg: ServerMessage) {
        let _ = self.out.send(msg.to_json());
    }

    async fn run(mut self, mut inbox: Inbox) {
        loop {
            let next = if self.pending_full {
                match inbox.try_recv() {
                    // newer input arrived: skip the full frame for now
                    Ok(m) => Some(m),
                    Err(mpsc::error::TryRecvError::Disconnected) => None,
                    Err(mpsc::error::TryRecvError::Empty) => self.render_full_or_interrupt(&mut inbox).await,
                }
            } else {
                inbox.recv().await
            };
            let Some(msg) = next else { break };
            match msg {
                Ok(ClientMessage::Close) => {
                    self.send(ServerMessage::Closed);
                    break;
                }
                Ok(m) => self.handle(m).await,
                Err(e) => self.send(ServerMessage::error("bad-request", e)),
            }
        }
    }

    /// Renders the owed full frame unless a message arrives first, which is
    /// then returned after the render is cancelled.
    async fn render_full_or_interrupt(&mut self, inbox: &mut Inbox) -> Option<Result<ClientMessage, String>> {
        let session = self.session.clone()?;
        let pose = CameraPose::from(&session.camera);
        let cancel = Arc::new(AtomicBool::new(false));
        let flag = cancel.clone();
        let mut job = tokio::task::spawn_blocking(move || session.render(Quality::Full, &flag));
        tokio::select! {
            done = &mut job => {
                self.pending_full = false;
                match done {
                    Ok(Ok(Some(img))) => {
                        let message = self.frame_message(&img, Quality::Full, pose);
                        let _ = self.out.send(message.clone());
                        self.cached_full = Some(message);
                    }
                    Ok(Ok(None)) => self.pending_full = true,
                    Ok(Err(e)) => self.send(ServerMessage::error(error_code(&e), e.to_string())),
                    Err(e) => self.send(ServerMessage::error("internal", e.to_string())),
                }
                inbox.recv().await
            }
            msg = inbox.recv() => {
                cancel.store(true, Ordering::Relaxed);
                let _ = job.await;
                msg
            }
        }
    }

    fn frame_message(&mut self, img: &ImageGrid, quality: Quality, camera: CameraPose) -> String {
        let id = self.next_frame;
        self.next_frame += 1;
        let msg = ServerMessage::Frame {
            id,
            w: img.width,
            h: img.height,
            format: "png-base64".into(),
            quality: match quality {
                Quality::Preview => "preview",
                Quality::Full => "full",
            }
            .into(),
            data: base64::engine::general_purpose::STANDARD.encode(img.png_bytes()),
            camera,
        };
        msg.to_json()
    }

    async fn send_preview(&mut self) {
        let Some(session) = self.session.clone() else { return };
        let pose = CameraPose::from(&session.camera);
        let never = AtomicBool::new(false);
        match tokio::task::spawn_blocking(move || session.render(Quality::Preview, &never)).await {
            Ok(Ok(Some(img))) => {
                let message = self.frame_message(&img, Quality::Preview, pose);
                let _ = self.out.send(message);
            }
            Ok(Ok(None)) => {}
            Ok(Err(e)) => self.send(ServerMessage::error(error_code(&e), e.to_string())),
            Err(e) => self.send(ServerMessage::error("internal", e.to_string())),
        }
    }

    async fn handle(&mut self, msg: ClientMessage) {
        match msg {
            ClientMessage::Open { config } => {
                let opened = resolve_config(&config).and_then(|c| Session::open(&c));
                match opened {
                    Ok(s) => {
                        let id = self.state.next_session.fetch_add(1, Ordering::Relaxed) + 1;
                        self.session = Some(Arc::new(s));
                        self.cached_full = None;
                        self.send(ServerMessage::Opened { session: id });
                        self.send_preview().await;
                        self.pending_full = true;
                    }
                    Err(e) => self.send(ServerMessage::error(error_code(&e), e.to_string())),
                }
            }
            ClientMessage::Nav(cmd) => {
                let Some(session) = self.session.as_mut() else {
                    self.send(ServerMessage::error("no-session", "open a session first"));
                    return;
                };
                let before = session.camera;
                // any render holding a reference has finished by now
                let result = Arc::make_mut(session).apply_nav(&cmd);
                match result {
                    Ok(()) if session.camera == before => self.refresh(),
                    Ok(()) => {
                        self.cached_full = None;
                        self.send_preview().await;
                        self.pending_full = true;
                    }
                    Err(e) => self.send(ServerMessage::error(error_code(&e), e.to_string())),
                }
            }
            ClientMessage::Refresh => self.refresh(),
            ClientMessage::List => self.send(ServerMessage::List {
                configs: bundled::names().map(String::from).collect(),
            }),
            ClientMessage::Close => {}
        }
    }

    fn refresh(&mut self) {
        if self.session.is_none() {
            self.send(ServerMessage::error("no-session", "open a session first"));
            return;
        }
        match &self.cached_full {
            Some(frame) if !self.pending_full => {
                let _ = self.out.send(frame.clone());
            }
            _ => self.pending_full = true,
        }
    }
}
