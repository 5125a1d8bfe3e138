//! Owns every session: serializes mutations per session, journals them
//! before answering, runs verification re-simulations on a bounded pool and
//! fans out events.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use evoarena_core::evolution::{evaluate, Genome, ParamsPatch};
use tokio::sync::{broadcast, Mutex, RwLock, Semaphore};

use crate::api::{
    CreateSession, Event, HistoryRecord, ResultMsg, SessionConfig, SessionInfo, SubmitResponse,
    TaskMsg,
};
use crate::error::ApiError;
use crate::session::{validate_config, DigestCheck, Session, SubmitPlan, Verification};
use crate::store::{Journal, Store};

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub data_dir: PathBuf,
    pub lease_seconds: f64,
    pub verify_fraction: f64,
    pub digest_check: DigestCheck,
    /// Concurrent verification re-simulations across all sessions.
    pub verify_workers: usize,
    /// Events a subscriber may fall behind before it is dropped.
    pub event_buffer: usize,
}

impl ServerConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            lease_seconds: 60.0,
            verify_fraction: 0.1,
            digest_check: DigestCheck::Exact,
            verify_workers: std::thread::available_parallelism().map_or(2, |n| n.get()),
            event_buffer: 1024,
        }
    }
}

struct Cell {
    state: Mutex<(Session, Journal)>,
    events: broadcast::Sender<Event>,
}

pub struct SessionManager {
    config: ServerConfig,
    store: Store,
    sessions: RwLock<HashMap<String, Arc<Cell>>>,
    verify_pool: Semaphore,
}

impl SessionManager {
    /// Opens the data directory and restores every stored session.
    pub fn open(config: ServerConfig) -> Result<Arc<Self>, ApiError> {
        validate_config(&SessionConfig {
            seed: 0,
            max_evals: None,
            lease_seconds: config.lease_seconds,
            verify_fraction: config.verify_fraction,
        })?;
        let store = Store::open(&config.data_dir)?;
        let mut sessions = HashMap::new();
        for (entries, journal) in store.load_all()? {
            let session = Session::replay(entries).map_err(ApiError::Internal)?;
            tracing::info!(session = %session.id, evals = session.history().len(), "restored session");
            let (events, _) = broadcast::channel(config.event_buffer.max(1));
            sessions.insert(session.id.clone(), Arc::new(Cell { state: Mutex::new((session, journal)), events }));
        }
        Ok(Arc::new(Self {
            verify_pool: Semaphore::new(config.verify_workers.max(1)),
            config,
            store,
            sessions: RwLock::new(sessions),
        }))
    }

    pub fn config(&self) -> &ServerConfig {
        &self.config
    }

    async fn cell(&self, id: &str) -> Result<Arc<Cell>, ApiError> {
        self.sessions.read().await.get(id).cloned().ok_or_else(|| ApiError::UnknownSession(id.to_owned()))
    }

    pub async fn create(&self, req: CreateSession) -> Result<SessionInfo, ApiError> {
        let config = SessionConfig {
            seed: req.seed.unwrap_or_else(rand::random),
            max_evals: req.max_evals,
            lease_seconds: self.config.lease_seconds,
            verify_fraction: self.config.verify_fraction,
        };
        let mut sessions = self.sessions.write().await;
        let id = loop {
            let id = format!("{:016x}", rand::random::<u64>());
            if !sessions.contains_key(&id) {
                break id;
            }
        };
        let (session, entry) = Session::new(id.clone(), req.kind, &req.params, config)?;
        let mut journal = self.store.create(&id)?;
        journal.append(&[entry])?;
        let info = session.info();
        let (events, _) = broadcast::channel(self.config.event_buffer.max(1));
        sessions.insert(id, Arc::new(Cell { state: Mutex::new((session, journal)), events }));
        tracing::info!(session = %info.session_id, kind = %info.kind, "created session");
        Ok(info)
    }

    pub async fn list(&self) -> Vec<SessionInfo> {
        let cells: Vec<_> = self.sessions.read().await.values().cloned().collect();
        let mut out = Vec::with_capacity(cells.len());
        for cell in cells {
            out.push(cell.state.lock().await.0.info());
        }
        out.sort_by(|a, b| a.session_id.cmp(&b.session_id));
        out
    }

    pub async fn info(&self, id: &str) -> Result<SessionInfo, ApiError> {
        Ok(self.cell(id).await?.state.lock().await.0.info())
    }

    pub async fn history(&self, id: &str) -> Result<Vec<HistoryRecord>, ApiError> {
        Ok(self.cell(id).await?.state.lock().await.0.history().to_vec())
    }

    pub async fn best(&self, id: &str) -> Result<Option<HistoryRecord>, ApiError> {
        Ok(self.cell(id).await?.state.lock().await.0.best().cloned())
    }

    pub async fn next_task(&self, id: &str, worker_id: &str) -> Result<TaskMsg, ApiError> {
        let cell = self.cell(id).await?;
        let mut state = cell.state.lock().await;
        state.0.next_task(worker_id, Instant::now())
    }

    pub async fn submit(&self, id: &str, msg: ResultMsg) -> Result<SubmitResponse, ApiError> {
        let cell = self.cell(id).await?;
        // Held across verification: EA state changes one result at a time.
        let mut state = cell.state.lock().await;
        let (session, journal) = &mut *state;
        let plan = session.prepare_submit(&msg, Instant::now(), rand::random::<f64>())?;
        let (task, verification) = match plan {
            SubmitPlan::Repeat(response) => return Ok(response),
            SubmitPlan::Trust(task) => (task, None),
            SubmitPlan::Verify(task) => {
                let genome = Genome { kind: session.kind, genes: task.genes.clone() };
                let (v, log) = self.resimulate(genome, task.params).await?;
                (task, Some((v, log)))
            }
        };
        let (response, entries, events) = session.finish_submit(
            &msg,
            &task,
            verification.as_ref().map(|(v, _)| v),
            self.config.digest_check,
        );
        if let (Some(index), Some((_, Some(bytes)))) = (response.eval_index, &verification) {
            self.store.write_log(&session.id, index, bytes)?;
        }
        journal.append(&entries)?;
        if response.rejected_reason.is_some() {
            tracing::warn!(session = %session.id, worker = %msg.worker_id, task = %msg.task_id, "verification mismatch");
        }
        for event in events {
            // no receivers is fine
            let _ = cell.events.send(event);
        }
        Ok(response)
    }

    async fn resimulate(
        &self,
        genome: Genome,
        params: evoarena_core::EvolutionParams,
    ) -> Result<(Verification, Option<Vec<u8>>), ApiError> {
        let _permit = self.verify_pool.acquire().await.map_err(|e| ApiError::Internal(e.to_string()))?;
        tokio::task::spawn_blocking(move || match evaluate(&genome, &params) {
            Ok(e) => {
                let bytes = e.log.to_bytes().map_err(|e| ApiError::Internal(e.to_string()))?;
                let digest = evoarena_core::digest::digest_bytes(&bytes);
                Ok((Verification { fitness: Some(e.fitness), log_digest: Some(digest) }, Some(bytes)))
            }
            Err(_) => Ok((Verification { fitness: None, log_digest: None }, None)),
        })
        .await
        .map_err(|e| ApiError::Internal(format!("verification task failed: {e}")))?
    }

    pub async fn update_params(&self, id: &str, patch: ParamsPatch) -> Result<SessionInfo, ApiError> {
        let cell = self.cell(id).await?;
        let mut state = cell.state.lock().await;
        let (session, journal) = &mut *state;
        let (entry, event) = session.update_params(&patch)?;
        journal.append(&[entry])?;
        let _ = cell.events.send(event);
        Ok(session.info())
    }

    pub async fn close(&self, id: &str) -> Result<SessionInfo, ApiError> {
        let cell = self.cell(id).await?;
        let mut state = cell.state.lock().await;
        let (session, journal) = &mut *state;
        if let Some((entry, event)) = session.close() {
            journal.append(&[entry])?;
            let _ = cell.events.send(event);
        }
        Ok(session.info())
    }

    /// Path of a stored log. Only server-simulated evaluations have one.
    pub async fn log_path(&self, id: &str, eval_index: u64) -> Result<PathBuf, ApiError> {
        let cell = self.cell(id).await?;
        let state = cell.state.lock().await;
        if eval_index >= state.0.history().len() as u64 {
            return Err(ApiError::InvalidArgument(format!("no evaluation {eval_index}")));
        }
        let path = self.store.log_path(id, eval_index);
        if !path.is_file() {
            return Err(ApiError::LogUnavailable(eval_index));
        }
        Ok(path)
    }

    /// A snapshot of the state from eval index `since` onward, and a
    /// receiver for everything that happens after it. Both are taken under
    /// the session lock, so nothing is missed or repeated.
    pub async fn subscribe(&self, id: &str, since: u64) -> Result<(Event, broadcast::Receiver<Event>), ApiError> {
        let cell = self.cell(id).await?;
        let state = cell.state.lock().await;
        Ok((state.0.snapshot(since), cell.events.subscribe()))
    }
}
