//! The `jointrecon` command-line driver.
//!
//! Exit codes: 0 success, 2 usage or validation error, 3 missing input,
//! 4 numerical divergence, 1 anything else.

pub mod args;
pub mod commands;
pub mod config;
pub mod manifest;
pub mod presets;

use clap::Parser;
use jointrecon_core::Error;

use args::{Cli, Command};

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_MISSING: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Parameter(_) | Error::Dimension(_) | Error::Geometry(_) | Error::Report(_) => EXIT_USAGE,
        Error::MissingInput(_) => EXIT_MISSING,
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => EXIT_MISSING,
        Error::Divergence { .. } | Error::TrainingDiverged { .. } => EXIT_DIVERGED,
        _ => EXIT_OTHER,
    }
}

/// Caps the global worker pool from `JOINTRECON_THREADS`.
fn configure_threads() {
    if let Some(n) = std::env::var("JOINTRECON_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            // Fails only if the pool already exists, which is harmless.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

/// Runs the CLI on `argv` and returns the process exit code.
pub fn run(argv: Vec<String>) -> i32 {
    let argv = match config::expand_argv(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    configure_threads();
    let result = match &cli.command {
        Command::Phantom(a) => commands::phantom(a, &argv),
        Command::Train(a) => commands::train(a, &argv),
        Command::Reconstruct(a) => commands::reconstruct(a, &argv),
        Command::Evaluate(a) => commands::evaluate(a, &argv),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
