//! Request, response and event bodies. Field names are part of the public
//! protocol.

use evoarena_core::evolution::{EvalRecord, EvolutionParams, ParamsPatch};
use evoarena_core::{AnimatKind, GenomeSpec};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateSession {
    pub kind: AnimatKind,
    #[serde(default)]
    pub params: ParamsPatch,
    /// Seeds the session's genome stream; random when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Close the session automatically after this many evaluations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_evals: Option<u64>,
}

impl CreateSession {
    pub fn new(kind: AnimatKind) -> Self {
        Self { kind, params: ParamsPatch::default(), seed: None, max_evals: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_evals: Option<u64>,
    pub lease_seconds: f64,
    pub verify_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParentInfo {
    pub eval_index: u64,
    pub fitness: f64,
    pub genome: Vec<f64>,
    /// Incremented every time the parent is replaced.
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub kind: AnimatKind,
    pub params: EvolutionParams,
    pub spec: GenomeSpec,
    pub config: SessionConfig,
    pub eval_count: u64,
    pub parent: Option<ParentInfo>,
    pub best: Option<HistoryRecord>,
    pub open_tasks: usize,
    pub closed: bool,
}

/// One genome handed to a worker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMsg {
    pub task_id: String,
    pub session_id: String,
    pub kind: AnimatKind,
    pub genome: Vec<f64>,
    pub spec: GenomeSpec,
    /// The parameters the genome must be evaluated under.
    pub params: EvolutionParams,
    pub parent_version: u64,
    pub lease_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultMsg {
    pub task_id: String,
    pub worker_id: String,
    /// Meters; ignored when `diverged`.
    pub fitness: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_digest: Option<String>,
    #[serde(default)]
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub task_id: String,
    pub accepted: bool,
    pub verified: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejected_reason: Option<String>,
    /// Present when the result was recorded in the history.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_index: Option<u64>,
    /// The task's parent had already been replaced.
    #[serde(default)]
    pub stale: bool,
}

pub const VERIFICATION_MISMATCH: &str = "verification-mismatch";

/// A history entry: the evaluation record plus where it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    #[serde(flatten)]
    pub record: EvalRecord,
    pub task_id: String,
    pub worker_id: String,
    pub verified: bool,
    #[serde(default)]
    pub stale: bool,
}

/// Pushed to subscribers, in order. Serialized with a `type` tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Event {
    /// First message on every subscription: the state live events build on.
    Snapshot { session: Box<SessionInfo>, history: Vec<HistoryRecord> },
    EvalRecorded { record: HistoryRecord },
    ParentReplaced { parent: ParentInfo },
    ParamsChanged { params: EvolutionParams },
    SessionClosed { eval_count: u64 },
    /// The subscriber fell behind and was disconnected.
    Dropped { missed: u64 },
}

impl Event {
    pub fn name(&self) -> &'static str {
        match self {
            Event::Snapshot { .. } => "snapshot",
            Event::EvalRecorded { .. } => "eval-recorded",
            Event::ParentReplaced { .. } => "parent-replaced",
            Event::ParamsChanged { .. } => "params-changed",
            Event::SessionClosed { .. } => "session-closed",
            Event::Dropped { .. } => "dropped",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}
