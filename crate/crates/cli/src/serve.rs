use evoarena_server::{serve, DigestCheck, ServerConfig, SessionManager};

use crate::{runtime, DigestCheckArg, ServeArgs, EXIT_FAILURE, EXIT_INVALID_ARGS, EXIT_OK};

pub(crate) fn run(args: &ServeArgs) -> u8 {
    let mut config = ServerConfig::new(&args.data_dir);
    config.lease_seconds = args.lease_seconds;
    config.verify_fraction = args.verify_fraction;
    config.digest_check = match args.digest_check {
        DigestCheckArg::Exact => DigestCheck::Exact,
        DigestCheckArg::FitnessOnly => DigestCheck::FitnessOnly,
    };
    if let Some(n) = args.verify_workers {
        config.verify_workers = n;
    }
    if let Some(dir) = &args.static_dir {
        if !dir.is_dir() {
            eprintln!("error: --static-dir {} is not a directory", dir.display());
            return EXIT_INVALID_ARGS;
        }
    }
    let manager = match SessionManager::open(config) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return if e.code() == "invalid-argument" { EXIT_INVALID_ARGS } else { EXIT_FAILURE };
        }
    };
    let rt = match runtime() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_FAILURE;
        }
    };
    rt.block_on(async {
        let listener = match tokio::net::TcpListener::bind(&args.bind).await {
            Ok(l) => l,
            Err(e) => {
                eprintln!("error: cannot bind {}: {e}", args.bind);
                return EXIT_INVALID_ARGS;
            }
        };
        match listener.local_addr() {
            Ok(addr) => {
                tracing::info!("listening on http://{addr}");
                // machine-readable for scripts that bind port 0
                println!("listening on http://{addr}");
            }
            Err(e) => tracing::warn!("{e}"),
        }
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
            tracing::info!("shutting down");
        };
        match serve(listener, manager, args.static_dir.clone(), shutdown).await {
            Ok(()) => EXIT_OK,
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_FAILURE
            }
        }
    })
}
