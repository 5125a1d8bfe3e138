//! Genome operators, simulated fitness evaluation and the elitist 1+1 loop.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::time::Instant;
use thiserror::Error;

use crate::animats::{
    build_animat, controller_targets, hold_targets, set_targets, AnimatError, AnimatKind,
    GenomeSpec,
};
use crate::physics::{PhysicsError, Vec3, World};
use crate::simlog::{replay, LogError, SimLog};

#[derive(Debug, Error)]
pub enum EvolutionError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Genome(#[from] AnimatError),
    #[error("evaluation failed: {0}")]
    Diverged(#[from] PhysicsError),
    #[error(transparent)]
    Log(#[from] LogError),
}

pub type Result<T, E = EvolutionError> = std::result::Result<T, E>;

/// User-adjustable search parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionParams {
    /// Mutation standard deviation as a fraction of each gene's range.
    pub mutation_sigma_scale: f64,
    /// Probability that any one gene is perturbed; the "mutation rate".
    pub per_gene_mutation_prob: f64,
    /// Length of the fitness window, seconds.
    pub eval_duration: f64,
    /// Time the controller holds its offsets before the fitness window.
    pub settle_duration: f64,
}

impl Default for EvolutionParams {
    fn default() -> Self {
        Self {
            mutation_sigma_scale: 0.10,
            per_gene_mutation_prob: 0.30,
            eval_duration: 10.0,
            settle_duration: 1.0,
        }
    }
}

/// Partial update of [`EvolutionParams`]; absent fields are left alone.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsPatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mutation_sigma_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_gene_mutation_prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_duration: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub settle_duration: Option<f64>,
}

impl EvolutionParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(EvolutionError::InvalidArgument(m));
        let p = self.per_gene_mutation_prob;
        if !(0.0..=1.0).contains(&p) {
            return bad(format!("per_gene_mutation_prob must lie in [0, 1], got {p}"));
        }
        if !(self.mutation_sigma_scale > 0.0) || !self.mutation_sigma_scale.is_finite() {
            return bad(format!(
                "mutation_sigma_scale must be positive, got {}",
                self.mutation_sigma_scale
            ));
        }
        for (name, v) in [("eval_duration", self.eval_duration), ("settle_duration", self.settle_duration)] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        Ok(())
    }

    /// Applies the patch if the result is valid; `self` is untouched otherwise.
    pub fn patched(&self, patch: &ParamsPatch) -> Result<Self> {
        let next = Self {
            mutation_sigma_scale: patch.mutation_sigma_scale.unwrap_or(self.mutation_sigma_scale),
            per_gene_mutation_prob: patch
                .per_gene_mutation_prob
                .unwrap_or(self.per_gene_mutation_prob),
            eval_duration: patch.eval_duration.unwrap_or(self.eval_duration),
            settle_duration: patch.settle_duration.unwrap_or(self.settle_duration),
        };
        next.validate()?;
        Ok(next)
    }

    fn steps(seconds: f64, dt: f64) -> usize {
        (seconds / dt).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Genome {
    pub kind: AnimatKind,
    pub genes: Vec<f64>,
}

impl Genome {
    pub fn spec(&self) -> GenomeSpec {
        self.kind.genome_spec()
    }

    pub fn validate(&self) -> Result<()> {
        let spec = self.spec();
        if self.genes.len() != spec.len() {
            return Err(AnimatError::LengthMismatch { expected: spec.len(), got: self.genes.len() }.into());
        }
        if let Some((b, g)) = spec.genes.iter().zip(&self.genes).find(|(b, g)| !b.contains(**g)) {
            return Err(EvolutionError::InvalidArgument(format!(
                "gene {} = {g} outside [{}, {}]",
                b.name, b.lo, b.hi
            )));
        }
        Ok(())
    }
}

/// Each gene uniform in its bounds.
pub fn random_genes(spec: &GenomeSpec, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    spec.genes.iter().map(|b| b.lo + b.range() * rng.random::<f64>()).collect()
}

pub fn random_genome(kind: AnimatKind, seed: u64) -> Genome {
    Genome { kind, genes: random_genes(&kind.genome_spec(), seed) }
}

/// Gated, bounded Gaussian mutation: each gene independently with
/// probability `per_gene_mutation_prob` receives `N(0, σ)` noise with
/// `σ = mutation_sigma_scale × range`, then is clamped to its bounds.
pub fn mutate_genes(parent: &[f64], spec: &GenomeSpec, params: &EvolutionParams, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    parent
        .iter()
        .zip(&spec.genes)
        .map(|(&g, b)| {
            // both draws happen for every gene so the stream layout does
            // not depend on the parameters
            let gate = rng.random::<f64>();
            let z: f64 = rand_distr::StandardNormal.sample(&mut rng);
            if gate < params.per_gene_mutation_prob {
                (g + z * params.mutation_sigma_scale * b.range()).clamp(b.lo, b.hi)
            } else {
                g
            }
        })
        .collect()
}

pub fn mutate(parent: &Genome, params: &EvolutionParams, seed: u64) -> Genome {
    Genome { kind: parent.kind, genes: mutate_genes(&parent.genes, &parent.spec(), params, seed) }
}

/// Torso start and end positions around the fitness window.
#[derive(Debug, Clone, Copy)]
pub struct WindowTrace {
    pub start: Vec3,
    pub end: Vec3,
}

impl WindowTrace {
    pub fn planar_displacement(&self) -> f64 {
        let d = self.end - self.start;
        (d.x * d.x + d.z * d.z).sqrt()
    }
}

/// Runs the two-phase evaluation schedule on `world`.
///
/// `observe` sees the world before every step, i.e. at `t = k·dt` for
/// `k = 0..settle_steps + eval_steps`; returning `false` stops early, in
/// which case `None` is returned.
pub fn run_schedule(
    world: &mut World,
    spec: &GenomeSpec,
    genes: &[f64],
    params: &EvolutionParams,
    torso: usize,
    mut observe: impl FnMut(&World) -> bool,
) -> Result<Option<WindowTrace>> {
    let dt = world.dt();
    let settle = EvolutionParams::steps(params.settle_duration, dt);
    let window = EvolutionParams::steps(params.eval_duration, dt);

    set_targets(world, &hold_targets(genes, spec)?);
    for _ in 0..settle {
        if !observe(world) {
            return Ok(None);
        }
        world.step()?;
    }
    let start = world.bodies[torso].position;
    for k in 0..window {
        set_targets(world, &controller_targets(genes, spec, k as f64 * dt)?);
        if !observe(world) {
            return Ok(None);
        }
        world.step()?;
    }
    Ok(Some(WindowTrace { start, end: world.bodies[torso].position }))
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    /// Planar torso displacement over the fitness window, meters.
    pub fitness: f64,
    pub log: SimLog,
}

/// Simulates `genome` and returns its fitness with the full log of both
/// phases.
pub fn evaluate(genome: &Genome, params: &EvolutionParams) -> Result<Evaluation> {
    params.validate()?;
    genome.validate()?;
    let (mut world, morphology) = build_animat(genome.kind);
    let spec = genome.spec();

    let mut meta = BTreeMap::new();
    meta.insert("kind".to_string(), genome.kind.to_string());
    meta.insert("genome".to_string(), serde_json::to_string(&genome.genes).expect("finite genes"));
    meta.insert("params".to_string(), serde_json::to_string(params).expect("finite params"));
    meta.insert("torso_id".to_string(), morphology.torso_id.to_string());
    let header = replay::header_from_world(&world, meta);

    let mut frames = Vec::with_capacity(
        EvolutionParams::steps(params.settle_duration + params.eval_duration, world.dt()) + 1,
    );
    let trace = run_schedule(&mut world, &spec, &genome.genes, params, morphology.torso_id, |w| {
        frames.push(replay::frame_from_world(w));
        true
    })?
    .expect("observer never stops");
    Ok(Evaluation { fitness: trace.planar_displacement(), log: SimLog { header, frames } })
}

/// One fitness evaluation in a run's history.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRecord {
    pub eval_index: u64,
    pub genome: Vec<f64>,
    /// Meters; 0 for diverged evaluations.
    pub fitness: f64,
    /// Whether this evaluation became the parent.
    pub accepted: bool,
    pub rng_seed: u64,
    #[serde(default)]
    pub diverged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_digest: Option<String>,
    /// Informational only and never serialized, so exported histories are
    /// reproducible byte for byte.
    #[serde(skip)]
    pub wall_time: f64,
}

/// Equality ignores `wall_time`.
impl PartialEq for EvalRecord {
    fn eq(&self, other: &Self) -> bool {
        self.eval_index == other.eval_index
            && self.genome == other.genome
            && self.fitness == other.fitness
            && self.accepted == other.accepted
            && self.rng_seed == other.rng_seed
            && self.diverged == other.diverged
            && self.log_digest == other.log_digest
    }
}

/// Elitist single-parent search. Parameters may change between steps.
pub struct OnePlusOne {
    kind: AnimatKind,
    spec: GenomeSpec,
    params: EvolutionParams,
    seeds: ChaCha8Rng,
    parent: Option<(Vec<f64>, f64)>,
    history: Vec<EvalRecord>,
    best: Option<usize>,
}

impl OnePlusOne {
    pub fn new(kind: AnimatKind, params: EvolutionParams, seed: u64) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            kind,
            spec: kind.genome_spec(),
            params,
            seeds: ChaCha8Rng::seed_from_u64(seed),
            parent: None,
            history: Vec::new(),
            best: None,
        })
    }

    pub fn params(&self) -> &EvolutionParams {
        &self.params
    }

    pub fn set_params(&mut self, params: EvolutionParams) -> Result<()> {
        params.validate()?;
        self.params = params;
        Ok(())
    }

    pub fn history(&self) -> &[EvalRecord] {
        &self.history
    }

    pub fn best(&self) -> Option<&EvalRecord> {
        self.best.map(|i| &self.history[i])
    }

    pub fn parent_fitness(&self) -> Option<f64> {
        self.parent.as_ref().map(|p| p.1)
    }

    /// Evaluates one candidate: a random genome first, then mutants of the
    /// current parent.
    pub fn step(&mut self) -> EvalRecord {
        let started = Instant::now();
        let seed = self.seeds.next_u64();
        let genes = match &self.parent {
            None => random_genes(&self.spec, seed),
            Some((p, _)) => mutate_genes(p, &self.spec, &self.params, seed),
        };
        let genome = Genome { kind: self.kind, genes };
        let (fitness, diverged, log_digest) = match evaluate(&genome, &self.params) {
            Ok(e) => (e.fitness, false, e.log.digest().ok()),
            Err(_) => (0.0, true, None),
        };
        let accepted = !diverged && self.parent.as_ref().map_or(true, |(_, f)| fitness >= *f);
        if accepted || self.parent.is_none() {
            self.parent = Some((genome.genes.clone(), fitness));
        }
        let record = EvalRecord {
            eval_index: self.history.len() as u64,
            genome: genome.genes,
            fitness,
            accepted,
            rng_seed: seed,
            diverged,
            log_digest,
            wall_time: started.elapsed().as_secs_f64(),
        };
        let index = self.history.len();
        if self.best.map_or(true, |b| fitness > self.history[b].fitness) {
            self.best = Some(index);
        }
        self.history.push(record.clone());
        record
    }
}

/// Runs `n_evals` evaluations, reporting each record as it completes.
pub fn run_1p1(
    kind: AnimatKind,
    params: EvolutionParams,
    seed: u64,
    n_evals: usize,
    mut on_record: impl FnMut(&EvalRecord),
) -> Result<(EvalRecord, Vec<EvalRecord>)> {
    if n_evals == 0 {
        return Err(EvolutionError::InvalidArgument("n_evals must be at least 1".into()));
    }
    let mut ea = OnePlusOne::new(kind, params, seed)?;
    for _ in 0..n_evals {
        let record = ea.step();
        on_record(&record);
    }
    let best = ea.best().expect("at least one evaluation").clone();
    Ok((best, ea.history))
}
