use std::time::Duration;

use evoarena_core::evolution::{EvolutionParams, ParamsPatch};
use evoarena_core::simlog::replay::{replay_verify, SAME_BUILD_TOLERANCE};
use evoarena_core::AnimatKind;
use evoarena_server::api::VERIFICATION_MISMATCH;
use evoarena_server::client::evaluate_task;
use evoarena_server::{
    run_worker, Client, CreateSession, Event, RunningServer, ServerConfig, WorkerOptions,
};
use futures::StreamExt;

fn quick() -> ParamsPatch {
    ParamsPatch { eval_duration: Some(0.5), settle_duration: Some(0.25), ..Default::default() }
}

fn config(dir: &tempfile::TempDir) -> ServerConfig {
    ServerConfig { verify_fraction: 0.0, ..ServerConfig::new(dir.path()) }
}

async fn start(config: ServerConfig) -> (RunningServer, Client) {
    let server = RunningServer::start(config, None).await.unwrap();
    let client = server.client();
    (server, client)
}

async fn session(client: &Client, max_evals: Option<u64>) -> String {
    let req = CreateSession { params: quick(), seed: Some(5), max_evals, ..CreateSession::new(AnimatKind::SimsCrawler) };
    client.create_session(&req).await.unwrap().session_id
}

#[tokio::test]
async fn sessions_start_empty_with_default_params() {
    let dir = tempfile::tempdir().unwrap();
    let (server, client) = start(config(&dir)).await;
    assert_eq!(client.health().await.unwrap()["status"], "ok");
    let a = client.create_session(&CreateSession::new(AnimatKind::Quadruped)).await.unwrap();
    let b = client.create_session(&CreateSession::new(AnimatKind::Octopod)).await.unwrap();
    assert_ne!(a.session_id, b.session_id);
    assert_eq!(a.params, EvolutionParams::default());
    assert!(client.history(&a.session_id).await.unwrap().is_empty());
    assert_eq!(client.best(&a.session_id).await.unwrap(), None);
    assert_eq!(a.spec.len(), 25);
    server.shutdown().await.unwrap();
}

#[tokio::test]
async fn errors_carry_reason_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (server, client) = start(config(&dir)).await;
    let err = client.history("nope").await.unwrap_err();
    assert_eq!(err.code(), Some("unknown-session"));

    let bad = CreateSession {
        params: ParamsPatch { per_gene_mutation_prob: Some(2.0), ..Default::default() },
        ..CreateSession::new(AnimatKind::Quadruped)
    };
    assert_eq!(client.create_session(&bad).await.unwrap_err().code(), Some("invalid-params"));

    let id = session(&client, None).await;
    let patch = ParamsPatch { eval_duration: Some(-1.0), ..Default::default() };
    assert_eq!(client.update_params(&id, &patch).await.unwrap_err().code(), Some("invalid-params"));
    assert_eq!(client.session(&id).await.unwrap().params.eval_duration, 0.5);

    let raw = reqwest::Client::new();
    let r = raw.post(format!("{}/api/sessions", server.url())).body("{not json").send().await.unwrap();
    assert_eq!(r.status(), 400);
    let body: serde_json::Value = r.json().await.unwrap();
    assert_eq!(body["error"], "invalid-argument");
    let r = raw.get(format!("{}/api/sessions/{id}/task", server.url())).send().await.unwrap();
    assert_eq!(r.status(), 400);

    let bogus = evoarena_server::ResultMsg {
        task_id: "missing".into(),
        worker_id: "w".into(),
        fitness: 1.0,
        log_digest: None,
        diverged: false,
    };
    assert_eq!(client.submit(&id, &bogus).await.unwrap_err().code(), Some("unknown-task"));
    server.shutdown().await.unwrap();
}

#[tokio::test]
async fn params_patch_reaches_the_next_task() {
    let dir = tempfile::tempdir().unwrap();
    let (server, client) = start(config(&dir)).await;
    let id = session(&client, None).await;
    let before = client.next_task(&id, "w").await.unwrap();
    let applied = client
        .update_params(&id, &ParamsPatch { per_gene_mutation_prob: Some(0.5), ..Default::default() })
        .await
        .unwrap();
    assert_eq!(applied.per_gene_mutation_prob, 0.5);
    assert_eq!(applied.eval_duration, 0.5);
    let after = client.next_task(&id, "w").await.unwrap();
    assert_eq!(before.params.per_gene_mutation_prob, 0.3);
    assert_eq!(after.params.per_gene_mutation_prob, 0.5);
    server.shutdown().await.unwrap();
}

#[tokio::test]
async fn honest_worker_is_verified_once_and_logs_replay() {
    let dir = tempfile::tempdir().unwrap();
    let (server, client) = start(config(&dir)).await;
    let id = session(&client, None).await;
    let mut responses = Vec::new();
    let options = WorkerOptions { max_tasks: Some(4), ..Default::default() };
    let report = run_worker(&client, &id, "honest", &options, |_, _, r| responses.push(r.clone())).await.unwrap();
    assert_eq!(report.submitted, 4);
    assert!(responses[0].verified && responses[0].accepted);
    assert!(responses[1..].iter().all(|r| !r.verified && r.rejected_reason.is_none()));

    let history = client.history(&id).await.unwrap();
    assert_eq!(history.len(), 4);
    let best = client.best(&id).await.unwrap().unwrap();
    let max = history.iter().map(|r| r.record.fitness).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(best.record.fitness, max);

    let log = client.log(&id, 0).await.unwrap();
    let report = replay_verify(&log[..], SAME_BUILD_TOLERANCE).unwrap();
    assert!(report.pass, "{report:?}");
    assert_eq!(
        evoarena_core::digest::digest_bytes(&log),
        history[0].record.log_digest.clone().unwrap()
    );
    assert_eq!(client.log(&id, 1).await.unwrap_err().code(), Some("log-unavailable"));
    assert_eq!(client.log(&id, 99).await.unwrap_err().code(), Some("invalid-argument"));
    server.shutdown().await.unwrap();
}

#[tokio::test]
async fn inflated_fitness_is_rejected_on_first_contact() {
    let dir = tempfile::tempdir().unwrap();
    let (server, client) = start(config(&dir)).await;
    let id = session(&client, None).await;
    let task = client.next_task(&id, "cheat").await.unwrap();
    let mut result = evaluate_task(&task, "cheat").unwrap();
    result.fitness *= 10.0;
    let response = client.submit(&id, &result).await.unwrap();
    assert!(!response.accepted);
    assert_eq!(response.rejected_reason.as_deref(), Some(VERIFICATION_MISMATCH));
    assert!(client.history(&id).await.unwrap().is_empty());
    // idempotent
    assert_eq!(client.submit(&id, &result).await.unwrap(), response);
    // the genome goes back into the queue for someone honest
    let retry = client.next_task(&id, "honest").await.unwrap();
    assert_eq!(retry.genome, task.genome);
    server.shutdown().await.unwrap();
}

#[tokio::test]
async fn duplicate_submission_returns_the_same_response() {
    let dir = tempfile::tempdir().unwrap();
    let (server, client) = start(config(&dir)).await;
    let id = session(&client, None).await;
    let task = client.next_task(&id, "w").await.unwrap();
    let result = evaluate_task(&task, "w").unwrap();
    let first = client.submit(&id, &result).await.unwrap();
    let second = client.submit(&id, &result).await.unwrap();
    assert_eq!(first, second);
    assert_eq!(client.history(&id).await.unwrap().len(), 1);
    server.shutdown().await.unwrap();
}

#[tokio::test]
async fn expired_lease_reissues_the_genome() {
    let dir = tempfile::tempdir().unwrap();
    let (server, client) = start(ServerConfig { lease_seconds: 0.3, ..config(&dir) }).await;
    let id = session(&client, None).await;
    let lost = client.next_task(&id, "crashes").await.unwrap();
    tokio::time::sleep(Duration::from_millis(400)).await;
    let reissued = client.next_task(&id, "survivor").await.unwrap();
    assert_eq!(reissued.genome, lost.genome);
    assert_ne!(reissued.task_id, lost.task_id);
    let late = evaluate_task(&lost, "crashes").unwrap();
    assert_eq!(client.submit(&id, &late).await.unwrap_err().code(), Some("task-expired"));
    server.shutdown().await.unwrap();
}

#[tokio::test]
async fn restart_preserves_history_params_and_champion() {
    let dir = tempfile::tempdir().unwrap();
    let (server, client) = start(config(&dir)).await;
    let id = session(&client, None).await;
    let options = WorkerOptions { max_tasks: Some(5), ..Default::default() };
    run_worker(&client, &id, "w", &options, |_, _, _| {}).await.unwrap();
    client.update_params(&id, &ParamsPatch { mutation_sigma_scale: Some(0.2), ..Default::default() }).await.unwrap();
    let before = (client.history(&id).await.unwrap(), client.session(&id).await.unwrap());
    server.shutdown().await.unwrap();

    let (server, client) = start(config(&dir)).await;
    let after = (client.history(&id).await.unwrap(), client.session(&id).await.unwrap());
    assert_eq!(after.0, before.0);
    assert_eq!(after.1.params, before.1.params);
    assert_eq!(after.1.best, before.1.best);
    assert_eq!(after.1.parent, before.1.parent);
    // verified logs survive too, and work continues where it stopped
    assert!(client.log(&id, 0).await.is_ok());
    let report = run_worker(&client, &id, "w", &WorkerOptions { max_tasks: Some(1), ..Default::default() }, |_, _, _| {})
        .await
        .unwrap();
    assert_eq!(report.submitted, 1);
    assert_eq!(client.history(&id).await.unwrap().len(), 6);
    server.shutdown().await.unwrap();
}

#[tokio::test]
async fn closing_stops_workers() {
    let dir = tempfile::tempdir().unwrap();
    let (server, client) = start(config(&dir)).await;
    let id = session(&client, Some(3)).await;
    let report = run_worker(&client, &id, "w", &WorkerOptions::default(), |_, _, _| {}).await.unwrap();
    assert_eq!(report.exit, evoarena_server::client::WorkerExit::SessionClosed);
    assert_eq!(report.submitted, 3);
    assert!(client.session(&id).await.unwrap().closed);
    assert_eq!(client.next_task(&id, "w").await.unwrap_err().code(), Some("session-closed"));

    let other = session(&client, None).await;
    assert!(client.close(&other).await.unwrap().closed);
    assert_eq!(client.next_task(&other, "w").await.unwrap_err().code(), Some("session-closed"));
    server.shutdown().await.unwrap();
}

/// Reads server-sent events until `n` have arrived.
async fn read_sse(response: &mut reqwest::Response, n: usize, buf: &mut String) -> Vec<Event> {
    let mut events = Vec::new();
    while events.len() < n {
        while let Some(end) = buf.find("\n\n") {
            let block: String = buf.drain(..end + 2).collect();
            if let Some(data) = block.lines().find_map(|l| l.strip_prefix("data: ")) {
                events.push(serde_json::from_str(data).unwrap());
            }
        }
        if events.len() >= n {
            break;
        }
        let chunk = tokio::time::timeout(Duration::from_secs(30), response.chunk()).await.unwrap().unwrap().unwrap();
        buf.push_str(std::str::from_utf8(&chunk).unwrap());
    }
    events
}

#[tokio::test]
async fn event_stream_delivers_snapshot_then_ordered_events() {
    let dir = tempfile::tempdir().unwrap();
    let (server, client) = start(config(&dir)).await;
    let id = session(&client, None).await;
    let raw = reqwest::Client::new();
    let mut sse = raw.get(format!("{}/api/sessions/{id}/events", server.url())).send().await.unwrap();
    assert_eq!(sse.headers()["content-type"], "text/event-stream");
    let mut buf = String::new();
    let first = read_sse(&mut sse, 1, &mut buf).await;
    assert!(matches!(&first[0], Event::Snapshot { history, .. } if history.is_empty()));

    // one evaluation that becomes the parent
    run_worker(&client, &id, "w", &WorkerOptions { max_tasks: Some(1), ..Default::default() }, |_, _, _| {})
        .await
        .unwrap();
    let events = read_sse(&mut sse, 2, &mut buf).await;
    assert!(matches!(&events[0], Event::EvalRecorded { record } if record.record.eval_index == 0));
    assert!(matches!(&events[1], Event::ParentReplaced { parent } if parent.eval_index == 0));

    client.update_params(&id, &ParamsPatch { per_gene_mutation_prob: Some(0.4), ..Default::default() }).await.unwrap();
    let events = read_sse(&mut sse, 1, &mut buf).await;
    assert!(matches!(&events[0], Event::ParamsChanged { params } if params.per_gene_mutation_prob == 0.4));

    // a reconnecting client asks for what it has not seen
    run_worker(&client, &id, "w", &WorkerOptions { max_tasks: Some(1), ..Default::default() }, |_, _, _| {})
        .await
        .unwrap();
    let mut again = raw.get(format!("{}/api/sessions/{id}/events?since=1", server.url())).send().await.unwrap();
    let mut buf2 = String::new();
    let snap = read_sse(&mut again, 1, &mut buf2).await;
    match &snap[0] {
        Event::Snapshot { history, session } => {
            assert_eq!(history.len(), 1);
            assert_eq!(history[0].record.eval_index, 1);
            assert_eq!(session.eval_count, 2);
        }
        other => panic!("{other:?}"),
    }

    client.close(&id).await.unwrap();
    let tail = read_sse(&mut again, 1, &mut buf2).await;
    assert!(matches!(tail[0], Event::SessionClosed { eval_count: 2 }));
    server.shutdown().await.unwrap();
}

#[tokio::test]
async fn events_are_also_available_over_websocket() {
    let dir = tempfile::tempdir().unwrap();
    let (server, client) = start(config(&dir)).await;
    let id = session(&client, None).await;
    let url = format!("ws://{}/api/sessions/{id}/events", server.addr);
    let (mut socket, _) = tokio_tungstenite::connect_async(url).await.unwrap();
    let next = |m: tokio_tungstenite::tungstenite::Message| -> Event {
        serde_json::from_str(m.to_text().unwrap()).unwrap()
    };
    let snapshot = next(socket.next().await.unwrap().unwrap());
    assert!(matches!(snapshot, Event::Snapshot { .. }));
    client.close(&id).await.unwrap();
    let closed = next(socket.next().await.unwrap().unwrap());
    assert!(matches!(closed, Event::SessionClosed { eval_count: 0 }));
    let _ = socket.close(None).await;
    server.shutdown().await.unwrap();
}

#[tokio::test]
async fn serves_static_assets_when_configured() {
    let dir = tempfile::tempdir().unwrap();
    let assets = tempfile::tempdir().unwrap();
    std::fs::write(assets.path().join("index.html"), "<h1>arena</h1>").unwrap();
    let server = RunningServer::start(config(&dir), Some(assets.path().to_owned())).await.unwrap();
    let body = reqwest::get(format!("{}/index.html", server.url())).await.unwrap().text().await.unwrap();
    assert_eq!(body, "<h1>arena</h1>");
    assert_eq!(server.client().health().await.unwrap()["status"], "ok");
    server.shutdown().await.unwrap();
}
