//! HTTP client for the session API and the worker loop built on it.

use std::time::Duration;

use evoarena_core::evolution::{evaluate, EvolutionError, EvolutionParams, Genome, ParamsPatch};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::api::{CreateSession, ErrorBody, HistoryRecord, ResultMsg, SessionInfo, SubmitResponse, TaskMsg};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("server answered {status}: {} ({})", body.message, body.error)]
    Api { status: u16, body: ErrorBody },
}

impl ClientError {
    /// The server's machine-readable error code, if it sent one.
    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Api { body, .. } => Some(&body.error),
            ClientError::Transport(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Client {
    http: reqwest::Client,
    base: String,
}

impl Client {
    pub fn new(base_url: &str) -> Self {
        Self { http: reqwest::Client::new(), base: base_url.trim_end_matches('/').to_owned() }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn decode<T: DeserializeOwned>(response: reqwest::Response) -> Result<T, ClientError> {
        let status = response.status();
        if status.is_success() {
            return Ok(response.json().await?);
        }
        let text = response.text().await?;
        let body = serde_json::from_str(&text)
            .unwrap_or_else(|_| ErrorBody { error: "http".into(), message: text });
        Err(ClientError::Api { status: status.as_u16(), body })
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        Self::decode(self.http.get(self.url(path)).send().await?).await
    }

    async fn send<B: Serialize, T: DeserializeOwned>(
        &self,
        method: reqwest::Method,
        path: &str,
        body: &B,
    ) -> Result<T, ClientError> {
        Self::decode(self.http.request(method, self.url(path)).json(body).send().await?).await
    }

    pub async fn health(&self) -> Result<serde_json::Value, ClientError> {
        self.get("/api/health").await
    }

    pub async fn create_session(&self, req: &CreateSession) -> Result<SessionInfo, ClientError> {
        self.send(reqwest::Method::POST, "/api/sessions", req).await
    }

    pub async fn session(&self, id: &str) -> Result<SessionInfo, ClientError> {
        self.get(&format!("/api/sessions/{id}")).await
    }

    pub async fn next_task(&self, id: &str, worker_id: &str) -> Result<TaskMsg, ClientError> {
        let url = reqwest::Url::parse_with_params(&self.url(&format!("/api/sessions/{id}/task")), [("worker", worker_id)])
            .expect("base URL was validated when the request was built");
        Self::decode(self.http.get(url).send().await?).await
    }

    pub async fn submit(&self, id: &str, result: &ResultMsg) -> Result<SubmitResponse, ClientError> {
        self.send(reqwest::Method::POST, &format!("/api/sessions/{id}/results"), result).await
    }

    pub async fn update_params(&self, id: &str, patch: &ParamsPatch) -> Result<EvolutionParams, ClientError> {
        self.send(reqwest::Method::PATCH, &format!("/api/sessions/{id}/params"), patch).await
    }

    pub async fn history(&self, id: &str) -> Result<Vec<HistoryRecord>, ClientError> {
        self.get(&format!("/api/sessions/{id}/history")).await
    }

    pub async fn best(&self, id: &str) -> Result<Option<HistoryRecord>, ClientError> {
        self.get(&format!("/api/sessions/{id}/best")).await
    }

    /// The raw `.simlog` bytes of a server-simulated evaluation.
    pub async fn log(&self, id: &str, eval_index: u64) -> Result<Vec<u8>, ClientError> {
        let response = self.http.get(self.url(&format!("/api/sessions/{id}/logs/{eval_index}"))).send().await?;
        if !response.status().is_success() {
            return Err(Self::decode::<()>(response).await.unwrap_err());
        }
        Ok(response.bytes().await?.to_vec())
    }

    pub async fn close(&self, id: &str) -> Result<SessionInfo, ClientError> {
        self.send(reqwest::Method::POST, &format!("/api/sessions/{id}/close"), &()).await
    }
}

/// Simulates a task locally and builds the result to report.
pub fn evaluate_task(task: &TaskMsg, worker_id: &str) -> Result<ResultMsg, EvolutionError> {
    let genome = Genome { kind: task.kind, genes: task.genome.clone() };
    let (fitness, log_digest, diverged) = match evaluate(&genome, &task.params) {
        Ok(e) => (e.fitness, Some(e.log.digest()?), false),
        Err(EvolutionError::Diverged(_)) => (0.0, None, true),
        Err(e) => return Err(e),
    };
    Ok(ResultMsg { task_id: task.task_id.clone(), worker_id: worker_id.to_owned(), fitness, log_digest, diverged })
}

#[derive(Debug, Clone)]
pub struct WorkerOptions {
    /// Stop after this many submitted results.
    pub max_tasks: Option<usize>,
    /// Give up after this many consecutive verification rejections; an
    /// honest worker is never rejected, so this signals a broken build.
    pub max_rejections: usize,
    /// Pause before retrying after a transport failure.
    pub retry_delay: Duration,
    /// Consecutive transport failures tolerated.
    pub max_retries: usize,
}

impl Default for WorkerOptions {
    fn default() -> Self {
        Self { max_tasks: None, max_rejections: 3, retry_delay: Duration::from_secs(1), max_retries: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorkerExit {
    SessionClosed,
    TaskLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WorkerReport {
    pub exit: WorkerExit,
    pub submitted: usize,
    pub accepted: usize,
}

#[derive(Debug, Error)]
pub enum WorkerError {
    #[error("{0} consecutive results failed server verification")]
    Rejected(usize),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("local evaluation failed: {0}")]
    Evaluation(String),
}

/// Requests, evaluates and submits tasks until the session closes or the
/// task limit is reached. `on_result` sees every task with its response.
pub async fn run_worker(
    client: &Client,
    session_id: &str,
    worker_id: &str,
    options: &WorkerOptions,
    mut on_result: impl FnMut(&TaskMsg, &ResultMsg, &SubmitResponse),
) -> Result<WorkerReport, WorkerError> {
    let mut report = WorkerReport { exit: WorkerExit::TaskLimit, submitted: 0, accepted: 0 };
    let mut rejections = 0;
    let mut failures = 0;
    loop {
        if options.max_tasks.is_some_and(|m| report.submitted >= m) {
            return Ok(report);
        }
        let task = match client.next_task(session_id, worker_id).await {
            Ok(task) => task,
            Err(e) if e.code() == Some("session-closed") => {
                report.exit = WorkerExit::SessionClosed;
                return Ok(report);
            }
            Err(ClientError::Transport(e)) if failures < options.max_retries => {
                failures += 1;
                tracing::warn!("fetching a task failed ({e}); retrying");
                tokio::time::sleep(options.retry_delay).await;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        failures = 0;
        let worker = worker_id.to_owned();
        let local = task.clone();
        let result = tokio::task::spawn_blocking(move || evaluate_task(&local, &worker))
            .await
            .map_err(|e| WorkerError::Evaluation(e.to_string()))?
            .map_err(|e| WorkerError::Evaluation(e.to_string()))?;
        let response = match client.submit(session_id, &result).await {
            Ok(r) => r,
            Err(e) if e.code() == Some("session-closed") => {
                report.exit = WorkerExit::SessionClosed;
                return Ok(report);
            }
            Err(e) if matches!(e.code(), Some("task-expired" | "unknown-task")) => {
                tracing::warn!(task = %task.task_id, "result not taken: {e}");
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        report.submitted += 1;
        report.accepted += usize::from(response.accepted);
        on_result(&task, &result, &response);
        if response.rejected_reason.is_some() {
            rejections += 1;
            if rejections >= options.max_rejections {
                return Err(WorkerError::Rejected(rejections));
            }
        } else {
            rejections = 0;
        }
    }
}
