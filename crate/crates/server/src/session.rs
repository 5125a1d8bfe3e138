//! Per-session evolutionary state: the distributed 1+1 rules, leases and
//! idempotent result handling. Synchronous and clock-injected; the
//! [`crate::manager`] serializes access and performs I/O.

use std::collections::{HashMap, HashSet, VecDeque};
use std::time::{Duration, Instant};

use evoarena_core::evolution::{
    mutate_genes, random_genes, EvalRecord, EvolutionParams, ParamsPatch,
};
use evoarena_core::{AnimatKind, GenomeSpec};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::api::{
    Event, HistoryRecord, ParentInfo, ResultMsg, SessionConfig, SessionInfo, SubmitResponse,
    TaskMsg, VERIFICATION_MISMATCH,
};
use crate::error::ApiError;

/// Reported and re-simulated fitness may differ by this much, relative to
/// `max(1, fitness)`.
pub const FITNESS_TOLERANCE: f64 = 1e-6;

/// How a re-simulated log digest is compared with the worker's.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DigestCheck {
    /// Digests must match byte for byte; right when workers run this build.
    #[default]
    Exact,
    /// Only fitness is compared; for heterogeneous worker builds whose logs
    /// agree within tolerance but not bit for bit.
    FitnessOnly,
}

/// Durable state changes, in the order they happened. Live updates and
/// restart recovery both go through [`Session::apply`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum JournalEntry {
    Created { session_id: String, kind: AnimatKind, params: EvolutionParams, config: SessionConfig },
    Params { params: EvolutionParams },
    Record { record: HistoryRecord, response: SubmitResponse },
    Rejected { worker_id: String, response: SubmitResponse },
    Closed,
}

#[derive(Debug, Clone)]
struct Pending {
    genes: Vec<f64>,
    seed: u64,
    /// Parent version the genome was derived from; 0 before any parent.
    parent_version: u64,
}

#[derive(Debug, Clone)]
pub struct OpenTask {
    pub genes: Vec<f64>,
    /// Seed the genome was drawn or mutated with.
    pub seed: u64,
    pub parent_version: u64,
    pub params: EvolutionParams,
    pub worker_id: String,
    issued_at: Instant,
    lease: Duration,
}

/// Outcome of a server-side re-simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct Verification {
    /// `None` when the simulation diverged.
    pub fitness: Option<f64>,
    pub log_digest: Option<String>,
}

/// What [`Session::prepare_submit`] decided.
#[derive(Debug)]
pub enum SubmitPlan {
    /// The task was already resolved; repeat the earlier response.
    Repeat(SubmitResponse),
    /// Re-simulate before [`Session::finish_submit`].
    Verify(OpenTask),
    /// Trust the reported fitness.
    Trust(OpenTask),
}

pub struct Session {
    pub id: String,
    pub kind: AnimatKind,
    spec: GenomeSpec,
    params: EvolutionParams,
    config: SessionConfig,
    parent: Option<ParentInfo>,
    parent_version: u64,
    history: Vec<HistoryRecord>,
    best: Option<usize>,
    open: HashMap<String, OpenTask>,
    expired: HashSet<String>,
    requeue: VecDeque<Pending>,
    resolved: HashMap<String, SubmitResponse>,
    workers_seen: HashSet<String>,
    seeds: ChaCha8Rng,
    closed: bool,
}

impl Session {
    pub fn new(
        id: String,
        kind: AnimatKind,
        patch: &ParamsPatch,
        config: SessionConfig,
    ) -> Result<(Self, JournalEntry), ApiError> {
        let params = EvolutionParams::default()
            .patched(patch)
            .map_err(|e| ApiError::InvalidParams(e.to_string()))?;
        validate_config(&config)?;
        let entry = JournalEntry::Created { session_id: id.clone(), kind, params, config };
        Ok((Self::blank(id, kind, params, config), entry))
    }

    fn blank(id: String, kind: AnimatKind, params: EvolutionParams, config: SessionConfig) -> Self {
        Self {
            id,
            kind,
            spec: kind.genome_spec(),
            params,
            config,
            parent: None,
            parent_version: 0,
            history: Vec::new(),
            best: None,
            open: HashMap::new(),
            expired: HashSet::new(),
            requeue: VecDeque::new(),
            resolved: HashMap::new(),
            workers_seen: HashSet::new(),
            seeds: ChaCha8Rng::seed_from_u64(config.seed),
            closed: false,
        }
    }

    /// Rebuilds a session from its journal. Open tasks are not journaled;
    /// work in flight at shutdown is simply issued again.
    pub fn replay(entries: impl IntoIterator<Item = JournalEntry>) -> Result<Self, String> {
        let mut entries = entries.into_iter();
        let mut session = match entries.next() {
            Some(JournalEntry::Created { session_id, kind, params, config }) => {
                Self::blank(session_id, kind, params, config)
            }
            other => return Err(format!("journal must start with a created entry, found {other:?}")),
        };
        for entry in entries {
            session.apply(&entry);
        }
        // a different stream from the pre-restart one, so re-issued seeds do
        // not repeat genomes already evaluated
        session.seeds.set_stream(session.history.len() as u64 + 1);
        Ok(session)
    }

    /// Applies a durable change.
    pub fn apply(&mut self, entry: &JournalEntry) {
        match entry {
            JournalEntry::Created { .. } => {}
            JournalEntry::Params { params } => self.params = *params,
            JournalEntry::Record { record, response } => {
                let index = self.history.len();
                if record.record.accepted {
                    self.parent_version += 1;
                    self.parent = Some(ParentInfo {
                        eval_index: record.record.eval_index,
                        fitness: record.record.fitness,
                        genome: record.record.genome.clone(),
                        version: self.parent_version,
                    });
                }
                let better = |b: &usize| record.record.fitness > self.history[*b].record.fitness;
                if !record.record.diverged && self.best.as_ref().is_none_or(better) {
                    self.best = Some(index);
                }
                self.workers_seen.insert(record.worker_id.clone());
                self.resolved.insert(response.task_id.clone(), response.clone());
                self.history.push(record.clone());
            }
            JournalEntry::Rejected { worker_id, response } => {
                self.workers_seen.insert(worker_id.clone());
                self.resolved.insert(response.task_id.clone(), response.clone());
            }
            JournalEntry::Closed => self.closed = true,
        }
    }

    pub fn params(&self) -> &EvolutionParams {
        &self.params
    }

    pub fn history(&self) -> &[HistoryRecord] {
        &self.history
    }

    pub fn best(&self) -> Option<&HistoryRecord> {
        self.best.map(|i| &self.history[i])
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn info(&self) -> SessionInfo {
        SessionInfo {
            session_id: self.id.clone(),
            kind: self.kind,
            params: self.params,
            spec: self.spec.clone(),
            config: self.config,
            eval_count: self.history.len() as u64,
            parent: self.parent.clone(),
            best: self.best().cloned(),
            open_tasks: self.open.len(),
            closed: self.closed,
        }
    }

    pub fn snapshot(&self, since: u64) -> Event {
        let from = (since as usize).min(self.history.len());
        Event::Snapshot { session: Box::new(self.info()), history: self.history[from..].to_vec() }
    }

    fn check_open(&self) -> Result<(), ApiError> {
        if self.closed {
            return Err(ApiError::SessionClosed(self.id.clone()));
        }
        Ok(())
    }

    /// Moves tasks whose lease ran out back to the queue, unless their
    /// parent has been replaced in the meantime (their result could never be
    /// accepted, so they are retired instead).
    pub fn expire_leases(&mut self, now: Instant) {
        let expired: Vec<String> = self
            .open
            .iter()
            .filter(|(_, t)| now.duration_since(t.issued_at) > t.lease)
            .map(|(id, _)| id.clone())
            .collect();
        for id in expired {
            let task = self.open.remove(&id).expect("listed above");
            self.requeue_if_current(task.genes, task.seed, task.parent_version);
            self.expired.insert(id);
        }
    }

    fn requeue_if_current(&mut self, genes: Vec<f64>, seed: u64, parent_version: u64) {
        if parent_version == self.parent_version {
            self.requeue.push_back(Pending { genes, seed, parent_version });
        }
    }

    pub fn next_task(&mut self, worker_id: &str, now: Instant) -> Result<TaskMsg, ApiError> {
        self.check_open()?;
        if worker_id.is_empty() {
            return Err(ApiError::InvalidArgument("worker id must not be empty".into()));
        }
        self.expire_leases(now);
        let pending = loop {
            match self.requeue.pop_front() {
                Some(p) if p.parent_version == self.parent_version => break p,
                Some(_) => continue,
                None => {
                    let seed = self.seeds.next_u64();
                    let genes = match &self.parent {
                        None => random_genes(&self.spec, seed),
                        Some(p) => mutate_genes(&p.genome, &self.spec, &self.params, seed),
                    };
                    break Pending { genes, seed, parent_version: self.parent_version };
                }
            }
        };
        let task_id = loop {
            let id = format!("{:016x}", rand::random::<u64>());
            if !self.open.contains_key(&id) && !self.resolved.contains_key(&id) && !self.expired.contains(&id) {
                break id;
            }
        };
        let lease = Duration::from_secs_f64(self.config.lease_seconds);
        let task = OpenTask {
            genes: pending.genes,
            seed: pending.seed,
            parent_version: pending.parent_version,
            params: self.params,
            worker_id: worker_id.to_owned(),
            issued_at: now,
            lease,
        };
        let msg = TaskMsg {
            task_id: task_id.clone(),
            session_id: self.id.clone(),
            kind: self.kind,
            genome: task.genes.clone(),
            spec: self.spec.clone(),
            params: task.params,
            parent_version: task.parent_version,
            lease_seconds: self.config.lease_seconds,
        };
        self.open.insert(task_id, task);
        Ok(msg)
    }

    /// First half of result handling: idempotency, lease and sanity checks,
    /// and the verification draw (`draw` is uniform in `[0, 1)`).
    pub fn prepare_submit(&mut self, msg: &ResultMsg, now: Instant, draw: f64) -> Result<SubmitPlan, ApiError> {
        if let Some(response) = self.resolved.get(&msg.task_id) {
            return Ok(SubmitPlan::Repeat(response.clone()));
        }
        self.check_open()?;
        self.expire_leases(now);
        if self.expired.contains(&msg.task_id) {
            return Err(ApiError::TaskExpired(msg.task_id.clone()));
        }
        let Some(task) = self.open.get(&msg.task_id) else {
            return Err(ApiError::UnknownTask(msg.task_id.clone()));
        };
        if msg.worker_id.is_empty() {
            return Err(ApiError::InvalidArgument("worker id must not be empty".into()));
        }
        if !msg.diverged && !(msg.fitness.is_finite() && msg.fitness >= 0.0) {
            return Err(ApiError::InvalidArgument(format!("fitness must be finite and non-negative, got {}", msg.fitness)));
        }
        let first_contact = !self.workers_seen.contains(&msg.worker_id);
        let task = task.clone();
        Ok(if first_contact || draw < self.config.verify_fraction {
            SubmitPlan::Verify(task)
        } else {
            SubmitPlan::Trust(task)
        })
    }

    /// Second half: compares against the re-simulation (if any), applies
    /// the 1+1 rule and returns the journal entry and events to publish.
    pub fn finish_submit(
        &mut self,
        msg: &ResultMsg,
        task: &OpenTask,
        verification: Option<&Verification>,
        digest_check: DigestCheck,
    ) -> (SubmitResponse, Vec<JournalEntry>, Vec<Event>) {
        self.open.remove(&msg.task_id);
        let verified = verification.is_some();
        if let Some(v) = verification {
            if mismatch(msg, v, digest_check) {
                let response = SubmitResponse {
                    task_id: msg.task_id.clone(),
                    accepted: false,
                    verified: true,
                    rejected_reason: Some(VERIFICATION_MISMATCH.into()),
                    eval_index: None,
                    stale: false,
                };
                self.requeue_if_current(task.genes.clone(), task.seed, task.parent_version);
                let entry = JournalEntry::Rejected { worker_id: msg.worker_id.clone(), response: response.clone() };
                self.apply(&entry);
                return (response, vec![entry], Vec::new());
            }
        }

        let (fitness, diverged, log_digest) = match verification {
            Some(v) => (v.fitness.unwrap_or(0.0), v.fitness.is_none(), v.log_digest.clone()),
            None if msg.diverged => (0.0, true, None),
            None => (msg.fitness, false, msg.log_digest.clone()),
        };
        let stale = task.parent_version != self.parent_version;
        let accepted = !diverged
            && !stale
            && self.parent.as_ref().is_none_or(|p| fitness >= p.fitness);
        let eval_index = self.history.len() as u64;
        let record = HistoryRecord {
            record: EvalRecord {
                eval_index,
                genome: task.genes.clone(),
                fitness,
                accepted,
                rng_seed: task.seed,
                diverged,
                log_digest,
                wall_time: 0.0,
            },
            task_id: msg.task_id.clone(),
            worker_id: msg.worker_id.clone(),
            verified,
            stale,
        };
        let response = SubmitResponse {
            task_id: msg.task_id.clone(),
            accepted,
            verified,
            rejected_reason: None,
            eval_index: Some(eval_index),
            stale,
        };
        let entry = JournalEntry::Record { record: record.clone(), response: response.clone() };
        self.apply(&entry);
        let mut entries = vec![entry];
        let mut events = vec![Event::EvalRecorded { record }];
        if accepted {
            events.push(Event::ParentReplaced { parent: self.parent.clone().expect("just set") });
        }
        if self.config.max_evals.is_some_and(|m| self.history.len() as u64 >= m) {
            entries.push(JournalEntry::Closed);
            events.extend(self.close_now());
        }
        (response, entries, events)
    }

    pub fn update_params(&mut self, patch: &ParamsPatch) -> Result<(JournalEntry, Event), ApiError> {
        self.check_open()?;
        let params = self.params.patched(patch).map_err(|e| ApiError::InvalidParams(e.to_string()))?;
        let entry = JournalEntry::Params { params };
        self.apply(&entry);
        Ok((entry, Event::ParamsChanged { params }))
    }

    /// Closes the session; `None` if it already was.
    pub fn close(&mut self) -> Option<(JournalEntry, Event)> {
        if self.closed {
            return None;
        }
        let event = self.close_now().pop().expect("one event");
        Some((JournalEntry::Closed, event))
    }

    fn close_now(&mut self) -> Vec<Event> {
        self.closed = true;
        self.open.clear();
        self.requeue.clear();
        vec![Event::SessionClosed { eval_count: self.history.len() as u64 }]
    }
}

fn mismatch(msg: &ResultMsg, v: &Verification, digest_check: DigestCheck) -> bool {
    match v.fitness {
        None => !msg.diverged,
        Some(_) if msg.diverged => true,
        Some(server) => {
            let fitness_off = (msg.fitness - server).abs() > FITNESS_TOLERANCE * server.max(1.0);
            let digest_off = digest_check == DigestCheck::Exact
                && msg.log_digest.is_some()
                && msg.log_digest != v.log_digest;
            fitness_off || digest_off
        }
    }
}

pub fn validate_config(config: &SessionConfig) -> Result<(), ApiError> {
    if !(config.lease_seconds > 0.0) || !config.lease_seconds.is_finite() {
        return Err(ApiError::InvalidArgument(format!("lease must be positive, got {}", config.lease_seconds)));
    }
    if !(0.0..=1.0).contains(&config.verify_fraction) {
        return Err(ApiError::InvalidArgument(format!(
            "verify fraction must lie in [0, 1], got {}",
            config.verify_fraction
        )));
    }
    if config.max_evals == Some(0) {
        return Err(ApiError::InvalidArgument("max_evals must be at least 1".into()));
    }
    Ok(())
}
