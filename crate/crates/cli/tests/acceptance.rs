//! End-to-end acceptance checks, one `PASS`/`FAIL` line per criterion.
//!
//! Runs without the libtest harness so the lines are always printed; the
//! process exits nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::time::{Duration, Instant};

use evoarena_core::evolution::{evaluate, run_1p1, EvalRecord, EvolutionParams, Genome};
use evoarena_core::physics::{box_vertices, joint_angle, Body, HingeJoint, Quat, Vec3, World};
use evoarena_core::simlog::replay::{frame_from_world, header_from_world, replay_verify, SAME_BUILD_TOLERANCE};
use evoarena_core::simlog::{self, LogError, LogWriter, SimLog};
use evoarena_core::AnimatKind;
use evoarena_server::api::{HistoryRecord, VERIFICATION_MISMATCH};
use evoarena_server::client::evaluate_task;
use evoarena_server::{run_worker, Client, CreateSession, RunningServer, ServerConfig, WorkerOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 5] = [
        ("physics oracles", physics_oracles),
        ("determinism", determinism),
        ("log standard", log_standard),
        ("distributed protocol", distributed_protocol),
        ("evolution properties", evolution_properties),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name} ({secs:.1} s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name} ({secs:.1} s): {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- physics

fn physics_oracles() -> Outcome {
    let (g, dt) = (9.81_f64, 1.0 / 240.0);

    let mut w = World::new();
    w.add_body(Body::new_box("cube", Vec3::new(0.5, 0.5, 0.5), 1.0).unwrap().at(Vec3::new(0.0, 10.0, 0.0)));
    w.step_n(240).map_err(|e| e.to_string())?;
    let n = 240.0;
    let y = w.bodies[0].position.y;
    let discrete = 10.0 - g * dt * dt * n * (n + 1.0) / 2.0;
    let continuous = 10.0 - 0.5 * g * (n * dt).powi(2);
    ensure!((y - discrete).abs() <= 1e-9, "free fall {y} vs discrete {discrete}");
    ensure!((y - continuous).abs() <= 0.03, "free fall {y} vs continuous {continuous}");

    // hinge pendulum: box of half extents (0.05, 0.25, 0.05) hung from its top face
    let mut w = World::new();
    let pivot = Vec3::new(0.0, 2.0, 0.0);
    let anchor = w.add_body(Body::new_static_box("anchor", Vec3::new(0.05, 0.05, 0.05)).unwrap().at(pivot));
    let half = Vec3::new(0.05, 0.25, 0.05);
    let bob = w.add_body(Body::new_box("bob", half, 1.0).unwrap().at(pivot - Vec3::new(0.0, 0.25, 0.0)));
    w.add_joint(HingeJoint::new(anchor, bob, Vec3::zeros(), Vec3::new(0.0, 0.25, 0.0), Vec3::z())).unwrap();
    let q = Quat::from_axis_angle(&Vec3::z_axis(), 5f64.to_radians());
    w.bodies[bob].orientation = q;
    w.bodies[bob].position = pivot + q * Vec3::new(0.0, -0.25, 0.0);
    let (m, d) = (1.0, 0.25);
    let inertia = m / 3.0 * (half.x * half.x + half.y * half.y) + m * d * d;
    let expected = 2.0 * PI * (inertia / (m * g * d)).sqrt();
    let mut crossings = Vec::new();
    let mut prev = joint_angle(&w, 0);
    for _ in 0..(8.0 / dt) as usize {
        w.step().map_err(|e| e.to_string())?;
        let a = joint_angle(&w, 0);
        if prev < 0.0 && a >= 0.0 {
            crossings.push(w.time() - dt + dt * -prev / (a - prev));
        }
        prev = a;
    }
    ensure!(crossings.len() >= 3, "pendulum did not swing");
    let period = (crossings[crossings.len() - 1] - crossings[0]) / (crossings.len() - 1) as f64;
    let period_err = (period - expected).abs() / expected;
    ensure!(period_err < 0.05, "pendulum period {period} vs {expected}");

    let mut w = World::new();
    w.add_body(Body::new_box("cube", Vec3::new(0.1, 0.1, 0.1), 1.0).unwrap().at(Vec3::new(0.0, 1.1, 0.0)));
    w.step_n(3 * 240).map_err(|e| e.to_string())?;
    let b = &w.bodies[0];
    let penetration = box_vertices(b).iter().map(|v| -v.y).fold(0.0, f64::max);
    let speed = b.linear_velocity.norm();
    ensure!(penetration <= 6e-3, "settled penetration {penetration}");
    ensure!(speed <= 0.01, "settled speed {speed}");

    Ok(format!(
        "free fall err {:.1e} m (discrete), {:.4} m (continuous); period err {:.2}%; cube penetration {:.4} m, speed {:.1e} m/s",
        (y - discrete).abs(),
        (y - continuous).abs(),
        period_err * 100.0,
        penetration,
        speed
    ))
}

// ------------------------------------------------------------ determinism

fn history_bytes(history: &[EvalRecord]) -> Vec<u8> {
    history.iter().flat_map(|r| serde_json::to_vec(r).unwrap().into_iter().chain([b'\n'])).collect()
}

fn determinism() -> Outcome {
    let params = EvolutionParams::default();
    let mut logs = 0;
    let mut worst = 0.0f64;
    for kind in AnimatKind::ALL {
        let (_, a) = run_1p1(kind, params, 42, 8, |_| {}).map_err(|e| e.to_string())?;
        let (_, b) = run_1p1(kind, params, 42, 8, |_| {}).map_err(|e| e.to_string())?;
        ensure!(history_bytes(&a) == history_bytes(&b), "{kind}: histories differ");
        for r in &a {
            let e = evaluate(&Genome { kind, genes: r.genome.clone() }, &params).map_err(|e| e.to_string())?;
            let bytes = e.log.to_bytes().map_err(|e| e.to_string())?;
            let digest = evoarena_core::digest::digest_bytes(&bytes);
            ensure!(r.log_digest.as_deref() == Some(digest.as_str()), "{kind} eval {}: log digest differs", r.eval_index);
            let report = replay_verify(&bytes[..], SAME_BUILD_TOLERANCE).map_err(|e| e.to_string())?;
            ensure!(report.pass, "{kind} eval {}: replay failed {report:?}", r.eval_index);
            worst = worst.max(report.max_position_error);
            logs += 1;
        }
    }
    Ok(format!("3 kinds x 8 evals reproduced byte-for-byte; {logs} logs replayed, max error {worst:e} m"))
}

// ------------------------------------------------------------ log standard

fn random_world(rng: &mut ChaCha8Rng) -> World {
    let mut world = World::new();
    let n = rng.random_range(1..6);
    for i in 0..n {
        let he = Vec3::new(rng.random_range(0.02..0.5), rng.random_range(0.02..0.5), rng.random_range(0.02..0.5));
        let body = if i == 0 && rng.random_bool(0.3) {
            Body::new_static_box(format!("b{i}"), he)
        } else {
            Body::new_box(format!("b{i}"), he, rng.random_range(0.1..5.0))
        }
        .unwrap();
        let pos = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(1.0..5.0), rng.random_range(-2.0..2.0));
        let q = Quat::from_euler_angles(rng.random_range(-PI..PI), rng.random_range(-PI..PI), rng.random_range(-PI..PI));
        let color = [rng.random(), rng.random(), rng.random()];
        world.add_body(body.at(pos).with_orientation(q).with_color(color));
    }
    if rng.random_bool(0.5) {
        for i in 1..n {
            let joint = HingeJoint::new(i - 1, i, Vec3::new(0.1, 0.0, 0.0), Vec3::new(-0.1, 0.0, 0.0), Vec3::z())
                .with_limits(-1.0, 1.0)
                .with_motor(2.0);
            world.add_joint(joint).unwrap();
        }
    }
    world
}

fn lines(bytes: &[u8]) -> Vec<String> {
    String::from_utf8(bytes.to_vec()).unwrap().lines().map(str::to_owned).collect()
}

fn join(lines: &[String]) -> Vec<u8> {
    let mut s = lines.join("\n");
    s.push('\n');
    s.into_bytes()
}

fn log_standard() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut frames_total = 0;
    for case in 0..100 {
        let mut world = random_world(&mut rng);
        let meta = BTreeMap::from([("case".to_string(), case.to_string())]);
        let header = header_from_world(&world, meta);
        let steps = rng.random_range(0..40);
        let mut frames = Vec::new();
        let mut writer = LogWriter::new(Vec::new(), &header).map_err(|e| e.to_string())?;
        for _ in 0..steps {
            let frame = frame_from_world(&world);
            writer.append_frame(&frame).map_err(|e| e.to_string())?;
            frames.push(frame);
            world.step().map_err(|e| e.to_string())?;
        }
        frames_total += frames.len();
        let streamed = writer.finish().map_err(|e| e.to_string())?;
        let log = SimLog { header, frames };
        let batch = log.to_bytes().map_err(|e| e.to_string())?;
        ensure!(streamed == batch, "world {case}: streaming and batch bytes differ");
        let back = SimLog::read(&batch[..]).map_err(|e| format!("world {case}: {e}"))?;
        ensure!(back == log, "world {case}: read-back differs");
        ensure!(back.to_bytes().unwrap() == batch, "world {case}: re-serialization differs");
    }

    let params = EvolutionParams { eval_duration: 0.5, settle_duration: 0.25, ..Default::default() };
    let genome = evoarena_core::evolution::random_genome(AnimatKind::Quadruped, 9);
    let bytes = evaluate(&genome, &params).map_err(|e| e.to_string())?.log.to_bytes().unwrap();
    let good = lines(&bytes);

    let mut truncated = bytes.clone();
    truncated.truncate(bytes.len() - 20);
    let malformed = matches!(simlog::read(&truncated[..]), Err(LogError::Malformed { .. }));
    let mut skewed = good.clone();
    skewed[10] = skewed[10].replacen("\"t\":", "\"t\":9", 1);
    let inconsistent = matches!(simlog::read(&join(&skewed)[..]), Err(LogError::InconsistentFrame { line: 11, .. }));
    let mut future = good.clone();
    future[0] = future[0].replacen("\"version\":1", "\"version\":2", 1);
    let version = matches!(simlog::read(&join(&future)[..]), Err(LogError::VersionUnsupported { version: 2 }));
    ensure!(
        malformed && inconsistent && version,
        "corruption detection: malformed {malformed}, inconsistent {inconsistent}, version {version}"
    );
    Ok(format!(
        "100 random worlds ({frames_total} frames) round-trip and stream byte-identically; truncated, skewed and future-version logs rejected"
    ))
}

// ---------------------------------------------------- distributed protocol

/// Walks a server history checking that acceptance followed the 1+1 rule.
fn check_elitism(history: &[HistoryRecord]) -> Result<(), String> {
    let mut parent: Option<f64> = None;
    for (i, h) in history.iter().enumerate() {
        let r = &h.record;
        ensure!(r.eval_index == i as u64, "eval_index {} at position {i}", r.eval_index);
        ensure!(!(r.accepted && h.stale), "eval {i} accepted although stale");
        if r.accepted {
            if let Some(p) = parent {
                ensure!(r.fitness >= p, "eval {i} accepted with {} < parent {p}", r.fitness);
            }
            parent = Some(r.fitness);
        } else if !h.stale && !r.diverged {
            if let Some(p) = parent {
                ensure!(r.fitness < p, "eval {i} rejected with {} >= parent {p}", r.fitness);
            }
        }
    }
    ensure!(parent.is_some(), "no accepted record");
    Ok(())
}

fn distributed_protocol() -> Outcome {
    tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap().block_on(protocol_scenario())
}

async fn protocol_scenario() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = ServerConfig { lease_seconds: 1.0, ..ServerConfig::new(dir.path()) };
    let server = RunningServer::start(config.clone(), None).await.map_err(|e| e.to_string())?;
    let client = server.client();

    let req = CreateSession { seed: Some(11), max_evals: Some(60), ..CreateSession::new(AnimatKind::Quadruped) };
    let id = client.create_session(&req).await.map_err(|e| e.to_string())?.session_id;

    // a cheater joins first and is caught on its first submission
    let task = client.next_task(&id, "cheater").await.map_err(|e| e.to_string())?;
    let mut forged = evaluate_task(&task, "cheater").map_err(|e| e.to_string())?;
    forged.fitness *= 10.0;
    let verdict = client.submit(&id, &forged).await.map_err(|e| e.to_string())?;
    ensure!(
        verdict.rejected_reason.as_deref() == Some(VERIFICATION_MISMATCH) && verdict.verified && !verdict.accepted,
        "inflated result not rejected: {verdict:?}"
    );

    // a crashed worker: takes a task and never reports back
    let lost = client.next_task(&id, "crashes").await.map_err(|e| e.to_string())?;
    tokio::time::sleep(Duration::from_millis(1100)).await;

    let workers: Vec<_> = ["honest-a", "honest-b"]
        .into_iter()
        .map(|name| {
            let client = client.clone();
            let id = id.clone();
            tokio::spawn(async move {
                let mut reissued = Vec::new();
                let report = run_worker(&client, &id, name, &WorkerOptions::default(), |task, _, _| {
                    reissued.push(task.genome.clone())
                })
                .await;
                (report, reissued)
            })
        })
        .collect();
    let mut submitted = Vec::new();
    let mut seen = Vec::new();
    for w in workers {
        let (report, genomes) = w.await.map_err(|e| e.to_string())?;
        submitted.push(report.map_err(|e| e.to_string())?.submitted);
        seen.extend(genomes);
    }
    ensure!(seen.contains(&lost.genome), "crashed worker's genome was never re-issued");
    ensure!(seen.contains(&task.genome), "cheater's genome was never re-issued");
    ensure!(submitted.iter().all(|&n| n > 0), "a worker did no work: {submitted:?}");

    let history = client.history(&id).await.map_err(|e| e.to_string())?;
    ensure!(history.len() >= 50, "only {} evaluations", history.len());
    ensure!(history.iter().all(|h| h.worker_id != "cheater"), "cheater's result entered the history");
    check_elitism(&history)?;
    let best = client.best(&id).await.map_err(|e| e.to_string())?.ok_or("no champion")?;
    let max = history.iter().map(|h| h.record.fitness).fold(f64::NEG_INFINITY, f64::max);
    ensure!(best.record.fitness == max, "champion {} is not the best {max}", best.record.fitness);
    let info = client.session(&id).await.map_err(|e| e.to_string())?;
    server.shutdown().await.map_err(|e| e.to_string())?;

    let server = RunningServer::start(config, None).await.map_err(|e| e.to_string())?;
    let client: Client = server.client();
    let after = client.history(&id).await.map_err(|e| e.to_string())?;
    let best_after = client.best(&id).await.map_err(|e| e.to_string())?;
    let info_after = client.session(&id).await.map_err(|e| e.to_string())?;
    server.shutdown().await.map_err(|e| e.to_string())?;
    ensure!(after == history, "history changed across restart");
    ensure!(best_after.as_ref() == Some(&best), "champion changed across restart");
    ensure!(info_after.parent == info.parent && info_after.closed == info.closed, "session state changed across restart");

    Ok(format!(
        "{} evals by 2 workers ({:?}), elitism intact, champion {:.3} m; x10 cheater rejected on first contact; abandoned task re-issued after lease; restart preserved history and champion",
        history.len(),
        submitted,
        best.record.fitness
    ))
}

// ---------------------------------------------------- evolution properties

fn evolution_properties() -> Outcome {
    let params = EvolutionParams::default();
    let kind = AnimatKind::Quadruped;
    let spec = kind.genome_spec();

    let mut idle = vec![0.0; spec.len()];
    *idle.last_mut().unwrap() = 1.0;
    let idle_fitness = evaluate(&Genome { kind, genes: idle }, &params).map_err(|e| e.to_string())?.fitness;
    ensure!(idle_fitness < 0.05, "zero-amplitude genome moved {idle_fitness} m");

    let runs: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = (1..=10u64).map(|seed| s.spawn(move || (seed, run_1p1(kind, params, seed, 200, |_| {})))).collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mut improved = 0;
    let mut summary = Vec::new();
    for (seed, run) in runs {
        let (best, history) = run.map_err(|e| format!("seed {seed}: {e}"))?;
        ensure!(history.len() == 200, "seed {seed}: {} records", history.len());
        let mut best_so_far = f64::NEG_INFINITY;
        for r in &history {
            let next = best_so_far.max(r.fitness);
            ensure!(next >= best_so_far, "seed {seed}: best-so-far decreased at {}", r.eval_index);
            best_so_far = next;
            ensure!(
                r.genome.len() == spec.len() && r.genome.iter().zip(&spec.genes).all(|(v, b)| b.contains(*v)),
                "seed {seed}: eval {} out of bounds",
                r.eval_index
            );
        }
        ensure!(best.fitness == best_so_far, "seed {seed}: reported best {} vs {best_so_far}", best.fitness);
        let initial = history[0].fitness;
        if best.fitness > initial {
            improved += 1;
        }
        summary.push(format!("{seed}:{initial:.2}->{:.2}", best.fitness));
    }
    ensure!(improved >= 9, "only {improved}/10 runs improved [{}]", summary.join(" "));
    Ok(format!(
        "{improved}/10 runs improved [{}]; bounds and best-so-far hold; idle genome {idle_fitness:.4} m",
        summary.join(" ")
    ))
}
