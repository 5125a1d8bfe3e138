use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use evoarena_core::evolution::{evaluate, run_1p1, EvalRecord, EvolutionParams, Genome};
use evoarena_core::AnimatKind;
use serde::Serialize;

use crate::{EvolveArgs, EXIT_FAILURE, EXIT_INVALID_ARGS, EXIT_OK};

#[derive(Debug, Serialize)]
struct BestGenome<'a> {
    kind: AnimatKind,
    eval_index: u64,
    fitness: f64,
    genome: &'a [f64],
    params: &'a EvolutionParams,
    seed: u64,
}

/// Files written by [`evolve`].
#[derive(Debug, Clone)]
pub struct EvolveOutput {
    pub history: PathBuf,
    pub best_genome: PathBuf,
    pub best_log: PathBuf,
    pub best: EvalRecord,
}

pub(crate) fn run(args: &EvolveArgs) -> u8 {
    let params = match args.params.resolve() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID_ARGS;
        }
    };
    if args.n_evals == 0 {
        eprintln!("error: --n-evals must be at least 1");
        return EXIT_INVALID_ARGS;
    }
    match evolve(args, params) {
        Ok(_) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_FAILURE
        }
    }
}

fn open_records(path: &Path) -> io::Result<Box<dyn Write>> {
    if path.as_os_str() == "-" {
        Ok(Box::new(io::stdout()))
    } else {
        Ok(Box::new(BufWriter::new(File::create(path)?)))
    }
}

/// Runs the evolution and writes its outputs. The files depend only on
/// kind, seed, evaluation count and parameters.
pub fn evolve(args: &EvolveArgs, params: EvolutionParams) -> anyhow::Result<EvolveOutput> {
    let kind: AnimatKind = args.kind.into();
    fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    let mut records = match &args.records_out {
        Some(p) => Some(open_records(p).with_context(|| format!("opening {}", p.display()))?),
        None => None,
    };
    let mut write_error = None;
    let mut best_so_far = f64::NEG_INFINITY;
    let (best, history) = run_1p1(kind, params, args.seed, args.n_evals, |r| {
        best_so_far = best_so_far.max(r.fitness);
        if !args.quiet {
            eprintln!(
                "eval {:>5}  fitness {:>9.5}  best {:>9.5}{}",
                r.eval_index,
                r.fitness,
                best_so_far,
                if r.accepted { "  accepted" } else { "" }
            );
        }
        if let Some(out) = records.as_mut() {
            let line = serde_json::to_string(r).expect("records serialize");
            if let Err(e) = writeln!(out, "{line}").and_then(|_| out.flush()) {
                write_error.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = write_error {
        return Err(e).context("writing --records-out");
    }

    let history_path = args.out_dir.join("history.jsonl");
    let mut out = BufWriter::new(File::create(&history_path)?);
    for r in &history {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;

    let best_genome = args.out_dir.join("best_genome.json");
    let doc = BestGenome {
        kind,
        eval_index: best.eval_index,
        fitness: best.fitness,
        genome: &best.genome,
        params: &params,
        seed: args.seed,
    };
    fs::write(&best_genome, serde_json::to_string_pretty(&doc)? + "\n")?;

    let best_log = args.out_dir.join("best.simlog");
    let evaluation = evaluate(&Genome { kind, genes: best.genome.clone() }, &params)
        .context("re-simulating the best genome")?;
    let file = BufWriter::new(File::create(&best_log)?);
    evaluation.log.write_to(file)?.flush()?;

    Ok(EvolveOutput { history: history_path, best_genome, best_log, best })
}
