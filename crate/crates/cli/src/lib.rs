//! Front end for the `downside` binary. Each subcommand reads the previous
//! stage's files, writes its own outputs plus a manifest, and maps failures
//! to exit codes: 0 success, 1 numerical or validation failure, 2 usage or
//! configuration error.

#[macro_use]
pub mod manifest;
pub mod args;
pub mod commands;
pub mod plots;
pub mod suite;

use std::fmt;

use args::{Cli, Command};
use manifest::RunContext;

/// Bad arguments or inputs detected by the front end itself.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Exit code for an error chain.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<downside_core::Error>() {
            return match e {
                downside_core::Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => EXIT_USAGE,
                e if e.is_usage() => EXIT_USAGE,
                _ => EXIT_FAILURE,
            };
        }
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            if io.kind() == std::io::ErrorKind::NotFound {
                return EXIT_USAGE;
            }
        }
    }
    EXIT_FAILURE
}

fn dispatch(cli: &Cli, ctx: &mut RunContext) -> anyhow::Result<i32> {
    match &cli.command {
        Command::Check(a) => commands::check(a, ctx),
        Command::Chi(a) => commands::chi(a, ctx),
        Command::Rate(a) => commands::rate(a, ctx),
        Command::Simulate(a) => commands::simulate(a, ctx),
        Command::Validate(a) => commands::validate(a, ctx),
    }
}

pub fn execute(cli: &Cli) -> i32 {
    execute_with(cli, false)
}

/// Runs one command inside a pool of `--threads` workers and writes its manifest.
pub fn execute_with(cli: &Cli, quiet: bool) -> i32 {
    let run = || -> i32 {
        let mut ctx = match RunContext::new(cli.command.name(), &cli.out_dir, cli.verbose) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e:#}");
                return EXIT_USAGE;
            }
        };
        ctx.quiet = quiet;
        let (code, message) = match dispatch(cli, &mut ctx) {
            Ok(code) => (code, None),
            Err(e) => {
                eprintln!("error: {e:#}");
                (exit_code(&e), Some(format!("{e:#}")))
            }
        };
        if let Err(e) = ctx.finish(code, message) {
            eprintln!("error: could not write manifest: {e:#}");
            return code.max(EXIT_FAILURE);
        }
        code
    };
    match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(run),
            Err(e) => {
                eprintln!("error: cannot start {n} threads: {e}");
                EXIT_USAGE
            }
        },
        None => run(),
    }
}
