use std::future::Future;
use std::io;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use futures::{Sink, SinkExt, Stream, StreamExt};
use modsim_core::dataset::DATASET_FILES;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;

use crate::outbox::Outbox;
use crate::protocol::{hello, ClientMsg};
use crate::session::{run_session, Inbound, SessionConfig};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub session: SessionConfig,
    /// Directory served under `/dataset/{file}`.
    pub dataset_dir: Option<PathBuf>,
    /// Also accept raw newline-delimited JSON connections here.
    pub tcp_bind: Option<String>,
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: io::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Splits incoming chunks into lines, forwards parsed messages to the
/// session, and writes queued replies until the session ends.
pub async fn serve_connection<R, W>(incoming: R, mut outgoing: W, config: SessionConfig)
where
    R: Stream<Item = String> + Unpin,
    W: Sink<String> + Unpin,
{
    let outbox = Arc::new(Outbox::new(config.max_lag_frames));
    outbox.push(hello());
    let (tx, rx) = mpsc::channel(64);
    let session = tokio::spawn(run_session(rx, outbox.clone(), config));

    let reader = async move {
        let mut incoming = incoming;
        while let Some(chunk) = incoming.next().await {
            for line in chunk.lines().filter(|l| !l.trim().is_empty()) {
                let msg = match serde_json::from_str::<ClientMsg>(line) {
                    Ok(m) => Inbound::Msg(m),
                    Err(e) => Inbound::Bad(e.to_string()),
                };
                let bad = matches!(msg, Inbound::Bad(_));
                if tx.send(msg).await.is_err() || bad {
                    return;
                }
            }
        }
    };
    let writer = async {
        while let Some(msg) = outbox.pop().await {
            if outgoing.send(msg.to_line()).await.is_err() {
                break;
            }
        }
        let _ = outgoing.close().await;
    };
    tokio::join!(reader, writer);
    if let Err(e) = session.await {
        tracing::error!("session task failed: {e}");
    }
}

async fn ws_connection(socket: WebSocket, config: SessionConfig) {
    let (sink, stream) = socket.split();
    let incoming = stream
        .take_while(|m| futures::future::ready(matches!(m, Ok(m) if !matches!(m, Message::Close(_)))))
        .filter_map(|m| {
            futures::future::ready(match m {
                Ok(Message::Text(t)) => Some(t.to_string()),
                _ => None,
            })
        });
    let outgoing = sink.with(|line: String| futures::future::ready(Ok::<_, axum::Error>(Message::Text(line.into()))));
    serve_connection(Box::pin(incoming), Box::pin(outgoing), config).await;
}

async fn tcp_connection(stream: TcpStream, config: SessionConfig) {
    let (read, write) = stream.into_split();
    let lines = BufReader::new(read).lines();
    let incoming = futures::stream::unfold(lines, |mut lines| async move {
        match lines.next_line().await {
            Ok(Some(line)) => Some((line, lines)),
            _ => None,
        }
    });
    let outgoing = futures::sink::unfold(write, |mut w, line: String| async move {
        w.write_all(line.as_bytes()).await?;
        w.write_all(b"\n").await?;
        Ok::<_, io::Error>(w)
    });
    serve_connection(Box::pin(incoming), Box::pin(outgoing), config).await;
}

async fn session_route(ws: WebSocketUpgrade, State(config): State<Arc<ServiceConfig>>) -> Response {
    let session = config.session.clone();
    ws.on_upgrade(move |socket| ws_connection(socket, session))
}

async fn tasks_route() -> Json<Vec<modsim_core::TaskSpec>> {
    Json(modsim_core::tasks::list_tasks())
}

async fn dataset_route(Path(file): Path<String>, State(config): State<Arc<ServiceConfig>>) -> Response {
    let Some(dir) = &config.dataset_dir else {
        return (StatusCode::NOT_FOUND, "no dataset configured").into_response();
    };
    if !DATASET_FILES.contains(&file.as_str()) {
        return (StatusCode::NOT_FOUND, "unknown dataset file").into_response();
    }
    match tokio::fs::read(dir.join(&file)).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, "application/x-ndjson")], bytes).into_response(),
        Err(e) if e.kind() == io::ErrorKind::NotFound => (StatusCode::NOT_FOUND, "not exported yet").into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

pub fn router(config: Arc<ServiceConfig>) -> Router {
    Router::new()
        .route("/session", get(session_route))
        .route("/tasks", get(tasks_route))
        .route("/dataset/{file}", get(dataset_route))
        .with_state(config)
}

pub struct Server {
    http: TcpListener,
    tcp: Option<TcpListener>,
    config: Arc<ServiceConfig>,
}

impl Server {
    pub async fn bind(addr: &str, config: ServiceConfig) -> Result<Self, ServiceError> {
        let listen = |addr: String| async move {
            TcpListener::bind(&addr).await.map_err(|source| ServiceError::Bind { addr, source })
        };
        let http = listen(addr.to_string()).await?;
        let tcp = match &config.tcp_bind {
            Some(a) => Some(listen(a.clone()).await?),
            None => None,
        };
        Ok(Self {
            http,
            tcp,
            config: Arc::new(config),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.http.local_addr()
    }

    pub fn tcp_addr(&self) -> Option<SocketAddr> {
        self.tcp.as_ref().and_then(|l| l.local_addr().ok())
    }

    pub async fn run(self) -> Result<(), ServiceError> {
        self.run_until(std::future::pending()).await
    }

    pub async fn run_until(self, shutdown: impl Future<Output = ()> + Send + 'static) -> Result<(), ServiceError> {
        if let Some(listener) = self.tcp {
            let session = self.config.session.clone();
            tokio::spawn(async move {
                loop {
                    match listener.accept().await {
                        Ok((stream, peer)) => {
                            tracing::debug!(%peer, "tcp session");
                            tokio::spawn(tcp_connection(stream, session.clone()));
                        }
                        Err(e) => tracing::warn!("accept failed: {e}"),
                    }
                }
            });
        }
        axum::serve(self.http, router(self.config))
            .with_graceful_shutdown(shutdown)
            .await?;
        Ok(())
    }
}

pub async fn serve(addr: &str, config: ServiceConfig) -> Result<(), ServiceError> {
    let server = Server::bind(addr, config).await?;
    tracing::info!(addr = %server.local_addr()?, "listening");
    server.run().await
}
