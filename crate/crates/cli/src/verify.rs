use std::fs::File;
use std::io::BufReader;

use evoarena_core::simlog::replay::replay_verify;

use crate::{VerifyArgs, EXIT_INVALID_ARGS, EXIT_OK, EXIT_VERIFICATION};

pub(crate) fn run(args: &VerifyArgs) -> u8 {
    if !(args.tolerance >= 0.0) {
        eprintln!("error: --tolerance must be non-negative");
        return EXIT_INVALID_ARGS;
    }
    let file = match File::open(&args.log) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: cannot open {}: {e}", args.log.display());
            return EXIT_INVALID_ARGS;
        }
    };
    let report = match replay_verify(BufReader::new(file), args.tolerance) {
        Ok(r) => r,
        Err(e) => {
            println!("FAIL {}: {} ({})", args.log.display(), e, e.code());
            return EXIT_VERIFICATION;
        }
    };
    if report.frames_compared == 0 {
        eprintln!("warning: {} has no frames; nothing was compared", args.log.display());
    }
    println!(
        "{} {}: frames {}/{}  max position error {:e} m  max orientation error {:e} rad  tolerance {:e} m",
        if report.pass { "PASS" } else { "FAIL" },
        args.log.display(),
        report.frames_compared,
        report.frames_expected,
        report.max_position_error,
        report.max_orientation_error,
        report.tolerance,
    );
    if report.pass {
        EXIT_OK
    } else {
        EXIT_VERIFICATION
    }
}
