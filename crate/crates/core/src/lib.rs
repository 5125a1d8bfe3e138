//! Native evolutionary-robotics toolkit.
//!
//! * [`physics`]: fixed-timestep rigid-body engine for boxes joined by
//!   motorized hinges over a ground plane.
//! * [`animats`]: the three fixed body plans and their sinusoidal controller.
//! * [`evolution`]: genome operators, fitness evaluation and the 1+1 loop.
//! * [`simlog`]: the line-delimited `.simlog` trace format and replay
//!   verification.

pub mod animats;
pub mod digest;
pub mod evolution;
pub mod physics;
pub mod simlog;

pub use animats::{build_animat, AnimatKind, GenomeSpec, MorphologySpec};
pub use evolution::{evaluate, run_1p1, EvalRecord, EvolutionParams, Genome};
pub use physics::{Body, HingeJoint, World};
pub use simlog::SimLog;
