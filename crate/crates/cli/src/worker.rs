use std::time::Duration;

use evoarena_server::client::{run_worker, Client, WorkerError, WorkerOptions};

use crate::{runtime, WorkerArgs, EXIT_FAILURE, EXIT_INVALID_ARGS, EXIT_OK, EXIT_PROTOCOL, EXIT_VERIFICATION};

pub(crate) fn run(args: &WorkerArgs) -> u8 {
    if !is_http_url(&args.server) {
        eprintln!("error: --server must be an http:// or https:// URL, got {:?}", args.server);
        return EXIT_INVALID_ARGS;
    }
    if args.max_rejections == 0 {
        eprintln!("error: --max-rejections must be at least 1");
        return EXIT_INVALID_ARGS;
    }
    let worker_id = args.worker_id.clone().unwrap_or_else(|| format!("worker-{}", std::process::id()));
    let options = WorkerOptions {
        max_tasks: args.max_tasks,
        max_rejections: args.max_rejections,
        retry_delay: Duration::from_secs(1),
        max_retries: 5,
    };
    let rt = match runtime() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_FAILURE;
        }
    };
    let client = Client::new(&args.server);
    let outcome = rt.block_on(run_worker(&client, &args.session, &worker_id, &options, |task, result, response| {
        println!(
            "task {}  fitness {:.5}  {}",
            task.task_id,
            result.fitness,
            match (&response.rejected_reason, response.accepted, response.stale) {
                (Some(reason), _, _) => format!("rejected: {reason}"),
                (None, true, _) => "accepted".to_string(),
                (None, false, true) => "stale".to_string(),
                (None, false, false) => "not better".to_string(),
            }
        );
    }));
    match outcome {
        Ok(report) => {
            eprintln!("{} results submitted, {} accepted ({:?})", report.submitted, report.accepted, report.exit);
            EXIT_OK
        }
        Err(e @ WorkerError::Rejected(_)) => {
            eprintln!("error: {e}; this build's results disagree with the server");
            EXIT_VERIFICATION
        }
        Err(e @ WorkerError::Client(_)) => {
            eprintln!("error: {e}");
            EXIT_PROTOCOL
        }
        Err(e @ WorkerError::Evaluation(_)) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

fn is_http_url(url: &str) -> bool {
    url.starts_with("http://") || url.starts_with("https://")
}
