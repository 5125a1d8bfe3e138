//! The `.simlog` trace format.
//!
//! A log is UTF-8 text with one JSON object per line. Line 1 is the header
//! (`"log": "header"`) carrying the full initial configuration; every
//! following line is a frame (`"log": "frame"`) with one
//! `[px, py, pz, qw, qx, qy, qz]` pose per body, in body-id order. Frame `k`
//! is the state at `t = k·dt`, before step `k + 1` is taken.
//!
//! Numbers use the shortest decimal form that round-trips to the same
//! `f64`. Fields this crate does not know are kept in `extra` maps and
//! written back unchanged.
//!
//! Nothing in this module depends on the physics engine; conversions to
//! and from a [`crate::physics::World`] live in [`replay`].

pub mod replay;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};
use thiserror::Error;

use crate::digest::Digest64;

pub const LOG_VERSION: u32 = 1;
pub const FILE_EXTENSION: &str = "simlog";

/// Allowed deviation of a logged quaternion from unit norm.
pub const QUAT_NORM_TOLERANCE: f64 = 1e-6;
/// Allowed deviation of a frame's `t` from `index · dt`.
pub const TIME_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("unsupported log version {version} (this reader understands {LOG_VERSION})")]
    VersionUnsupported { version: u64 },
    #[error("line {line}: inconsistent frame: {reason}")]
    InconsistentFrame { line: usize, reason: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("cannot replay: {0}")]
    CannotReplay(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl LogError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            Self::Malformed { .. } => "malformed-line",
            Self::VersionUnsupported { .. } => "version-unsupported",
            Self::InconsistentFrame { .. } => "inconsistent-frame",
            Self::InvalidArgument(_) => "invalid-argument",
            Self::CannotReplay(_) => "cannot-replay",
            Self::Io(_) => "io",
        }
    }
}

pub type Result<T, E = LogError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyEntry {
    pub id: usize,
    pub name: String,
    pub shape: String,
    pub half_extents: [f64; 3],
    #[serde(with = "crate::physics::mass_serde")]
    pub mass: f64,
    pub color: [f64; 3],
    /// Initial pose. Needed for replay; optional for playback.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<[f64; 3]>,
    /// `[w, x, y, z]`
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orientation: Option<[f64; 4]>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointEntry {
    pub id: usize,
    pub parent: usize,
    pub child: usize,
    pub anchor_parent: [f64; 3],
    pub anchor_child: [f64; 3],
    pub axis_parent: [f64; 3],
    /// `[lo, hi]`, radians
    pub limits: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis_child: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motor_max_torque: Option<f64>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub version: u32,
    pub dt: f64,
    pub gravity: [f64; 3],
    pub bodies: Vec<BodyEntry>,
    pub joints: Vec<JointEntry>,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver_iterations: Option<usize>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub t: f64,
    pub states: Vec<[f64; 7]>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Frame {
    pub fn new(t: f64, states: Vec<[f64; 7]>) -> Self {
        Self { t, states, extra: Map::new() }
    }
}

/// A complete in-memory log.
#[derive(Debug, Clone, PartialEq)]
pub struct SimLog {
    pub header: LogHeader,
    pub frames: Vec<Frame>,
}

impl SimLog {
    pub fn write_to<W: Write>(&self, sink: W) -> Result<W> {
        write(&self.header, &self.frames, sink)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.write_to(Vec::new())
    }

    /// Digest of the serialized file, computed without buffering it.
    pub fn digest(&self) -> Result<String> {
        Ok(self.write_to(Digest64::new())?.finish())
    }

    pub fn read<R: BufRead>(source: R) -> Result<Self> {
        let (header, frames) = read(source)?;
        Ok(Self { header, frames })
    }
}

fn all_finite<'a>(values: impl IntoIterator<Item = &'a f64>) -> bool {
    values.into_iter().all(|v| v.is_finite())
}

impl LogHeader {
    /// Checks the structural invariants; the message is reported against
    /// line 1 by the reader.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(format!("dt must be positive, got {}", self.dt));
        }
        if !all_finite(&self.gravity) {
            return Err("gravity must be finite".into());
        }
        for (i, b) in self.bodies.iter().enumerate() {
            if b.id != i {
                return Err(format!("body ids must be dense 0..N, found {} at index {i}", b.id));
            }
            if b.shape != "box" {
                return Err(format!("body {i}: unsupported shape {:?}", b.shape));
            }
            if !all_finite(&b.half_extents) || b.half_extents.iter().any(|h| *h <= 0.0) {
                return Err(format!("body {i}: half extents must be positive"));
            }
            if !(b.mass > 0.0) {
                return Err(format!("body {i}: mass must be positive"));
            }
            let pose_ok = b.position.map_or(true, |p| all_finite(&p))
                && b.orientation.map_or(true, |q| all_finite(&q));
            if !all_finite(&b.color) || !pose_ok {
                return Err(format!("body {i}: non-finite number"));
            }
        }
        let n = self.bodies.len();
        for (i, j) in self.joints.iter().enumerate() {
            if j.id != i {
                return Err(format!("joint ids must be dense 0..M, found {} at index {i}", j.id));
            }
            if j.parent >= n || j.child >= n || j.parent == j.child {
                return Err(format!("joint {i}: bad body references {}/{}", j.parent, j.child));
            }
            let numbers = j
                .anchor_parent
                .iter()
                .chain(&j.anchor_child)
                .chain(&j.axis_parent)
                .chain(&j.limits)
                .chain(j.axis_child.iter().flatten())
                .chain(j.motor_max_torque.iter());
            if !all_finite(numbers) {
                return Err(format!("joint {i}: non-finite number"));
            }
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct Tagged<'a, T> {
    log: &'static str,
    #[serde(flatten)]
    record: &'a T,
}

/// Streaming writer: the header goes out on construction, then one line per
/// appended frame.
pub struct LogWriter<W: Write> {
    sink: W,
    body_count: usize,
    dt: f64,
    frames: usize,
    last_t: Option<f64>,
}

impl<W: Write> LogWriter<W> {
    pub fn new(mut sink: W, header: &LogHeader) -> Result<Self> {
        if header.version != LOG_VERSION {
            return Err(LogError::InvalidArgument(format!(
                "cannot write version {}",
                header.version
            )));
        }
        header.validate().map_err(LogError::InvalidArgument)?;
        write_line(&mut sink, &Tagged { log: "header", record: header })?;
        Ok(Self { sink, body_count: header.bodies.len(), dt: header.dt, frames: 0, last_t: None })
    }

    pub fn append_frame(&mut self, frame: &Frame) -> Result<()> {
        check_frame(frame, self.frames, self.body_count, self.dt, self.last_t)
            .map_err(LogError::InvalidArgument)?;
        write_line(&mut self.sink, &Tagged { log: "frame", record: frame })?;
        self.frames += 1;
        self.last_t = Some(frame.t);
        Ok(())
    }

    pub fn frames_written(&self) -> usize {
        self.frames
    }

    pub fn finish(mut self) -> Result<W> {
        self.sink.flush()?;
        Ok(self.sink)
    }
}

fn write_line<W: Write, T: Serialize>(sink: &mut W, record: &T) -> Result<()> {
    serde_json::to_writer(&mut *sink, record)
        .map_err(|e| LogError::InvalidArgument(e.to_string()))?;
    sink.write_all(b"\n")?;
    Ok(())
}

/// Writes a whole log; byte-identical to streaming the same frames through
/// a [`LogWriter`].
pub fn write<W: Write>(header: &LogHeader, frames: &[Frame], sink: W) -> Result<W> {
    let mut w = LogWriter::new(sink, header)?;
    for f in frames {
        w.append_frame(f)?;
    }
    w.finish()
}

fn check_frame(
    frame: &Frame,
    index: usize,
    body_count: usize,
    dt: f64,
    last_t: Option<f64>,
) -> std::result::Result<(), String> {
    if frame.states.len() != body_count {
        return Err(format!(
            "frame {index} has {} states but the header declares {body_count} bodies",
            frame.states.len()
        ));
    }
    if !frame.t.is_finite() || frame.states.iter().any(|s| !all_finite(s)) {
        return Err(format!("frame {index} contains a non-finite number"));
    }
    if let Some(prev) = last_t {
        if !(frame.t > prev) {
            return Err(format!("frame {index}: time {} does not increase past {prev}", frame.t));
        }
    }
    let expect = index as f64 * dt;
    if (frame.t - expect).abs() > TIME_TOLERANCE {
        return Err(format!("frame {index}: time {} but expected {expect}", frame.t));
    }
    for (b, s) in frame.states.iter().enumerate() {
        let norm = (s[3] * s[3] + s[4] * s[4] + s[5] * s[5] + s[6] * s[6]).sqrt();
        if (norm - 1.0).abs() > QUAT_NORM_TOLERANCE {
            return Err(format!("frame {index}, body {b}: quaternion norm {norm}"));
        }
    }
    Ok(())
}

/// Incremental reader; yields frames one at a time after parsing the header.
pub struct LogReader<R: BufRead> {
    lines: io::Lines<R>,
    header: LogHeader,
    line: usize,
    frames: usize,
    last_t: Option<f64>,
}

fn parse_tagged(text: &str, line: usize, expect: &str) -> Result<Map<String, Value>> {
    let malformed = |message: String| LogError::Malformed { line, message };
    let value: Value = serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
    let Value::Object(mut obj) = value else {
        return Err(malformed("record is not an object".into()));
    };
    match obj.remove("log") {
        Some(Value::String(tag)) if tag == expect => Ok(obj),
        Some(other) => Err(malformed(format!("expected \"log\": \"{expect}\", found {other}"))),
        None => Err(malformed("missing \"log\" tag".into())),
    }
}

impl<R: BufRead> LogReader<R> {
    pub fn new(source: R) -> Result<Self> {
        let mut lines = source.lines();
        let first = match lines.next() {
            Some(l) => l?,
            None => return Err(LogError::Malformed { line: 1, message: "empty log".into() }),
        };
        let obj = parse_tagged(&first, 1, "header")?;
        let version = obj.get("version").and_then(Value::as_u64);
        match version {
            Some(v) if v == LOG_VERSION as u64 => {}
            Some(v) => return Err(LogError::VersionUnsupported { version: v }),
            None => {
                return Err(LogError::Malformed {
                    line: 1,
                    message: "missing or non-integer version".into(),
                })
            }
        }
        let header: LogHeader = serde_json::from_value(Value::Object(obj))
            .map_err(|e| LogError::Malformed { line: 1, message: e.to_string() })?;
        header.validate().map_err(|message| LogError::Malformed { line: 1, message })?;
        Ok(Self { lines, header, line: 1, frames: 0, last_t: None })
    }

    pub fn header(&self) -> &LogHeader {
        &self.header
    }

    fn parse_next(&mut self, text: &str) -> Result<Frame> {
        let obj = parse_tagged(text, self.line, "frame")?;
        let frame: Frame = serde_json::from_value(Value::Object(obj))
            .map_err(|e| LogError::Malformed { line: self.line, message: e.to_string() })?;
        check_frame(&frame, self.frames, self.header.bodies.len(), self.header.dt, self.last_t)
            .map_err(|reason| LogError::InconsistentFrame { line: self.line, reason })?;
        self.frames += 1;
        self.last_t = Some(frame.t);
        Ok(frame)
    }
}

impl<R: BufRead> Iterator for LogReader<R> {
    type Item = Result<Frame>;

    fn next(&mut self) -> Option<Self::Item> {
        let text = match self.lines.next()? {
            Ok(t) => t,
            Err(e) => return Some(Err(e.into())),
        };
        self.line += 1;
        Some(self.parse_next(&text))
    }
}

/// Parses and validates a whole log.
pub fn read<R: BufRead>(source: R) -> Result<(LogHeader, Vec<Frame>)> {
    let mut reader = LogReader::new(source)?;
    let frames = reader.by_ref().collect::<Result<Vec<_>>>()?;
    Ok((reader.header, frames))
}
