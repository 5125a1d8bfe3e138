//! Session server for distributed evolution.
//!
//! Workers fetch genomes (`GET /api/sessions/{id}/task?worker=ID`), simulate
//! them locally and post the fitness back. The server keeps one elitist
//! lineage per session: every task is a child of the parent that was current
//! when it was issued, the first acceptable result replaces that parent, and
//! results against a parent that has since been replaced are recorded but
//! never accepted. Leases expire so crashed workers lose no genomes; a
//! fraction of results, and every worker's first, are re-simulated and
//! rejected on mismatch. State changes are journaled before they are
//! acknowledged, and subscribers receive them as server-sent events or over
//! a WebSocket.

pub mod api;
pub mod client;
pub mod error;
pub mod http;
pub mod manager;
pub mod session;
pub mod store;

use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

pub use api::{CreateSession, Event, HistoryRecord, ResultMsg, SessionInfo, SubmitResponse, TaskMsg};
pub use client::{run_worker, Client, ClientError, WorkerOptions};
pub use error::ApiError;
pub use manager::{ServerConfig, SessionManager};
pub use session::DigestCheck;

/// Serves the API on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    manager: Arc<SessionManager>,
    static_dir: Option<PathBuf>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let app = http::router(manager, static_dir);
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}

/// A server on an ephemeral local port, for tests and embedding.
pub struct RunningServer {
    pub addr: SocketAddr,
    pub manager: Arc<SessionManager>,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    task: tokio::task::JoinHandle<std::io::Result<()>>,
}

impl RunningServer {
    pub async fn start(config: ServerConfig, static_dir: Option<PathBuf>) -> Result<Self, ApiError> {
        let manager = SessionManager::open(config)?;
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
        let addr = listener.local_addr()?;
        let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
        let task = tokio::spawn(serve(listener, manager.clone(), static_dir, async {
            let _ = stopped.await;
        }));
        Ok(Self { addr, manager, stop: Some(stop), task })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn client(&self) -> Client {
        Client::new(&self.url())
    }

    /// Stops accepting requests and waits for the server task to end.
    pub async fn shutdown(mut self) -> std::io::Result<()> {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        // open event streams would hold graceful shutdown forever
        self.task.abort();
        match self.task.await {
            Ok(result) => result,
            Err(_) => Ok(()),
        }
    }
}
