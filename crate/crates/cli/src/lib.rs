//! Command-line front end for the `ia1` pipeline.

pub mod args;
pub mod commands;
pub mod config;
pub mod pipeline;

use std::fmt;

use args::{Cli, Command};

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// A bad argument, config or input file, reported with exit code 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationError(pub String);

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ValidationError {}

pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<ValidationError>().is_some() {
            return EXIT_VALIDATION;
        }
        if let Some(e) = cause.downcast_ref::<ia1_core::Error>() {
            if e.is_validation() {
                return EXIT_VALIDATION;
            }
        }
    }
    EXIT_RUNTIME
}

/// Builds the global thread pool from `IA1_THREADS` when it is set.
pub fn init_threads() -> anyhow::Result<()> {
    let Ok(v) = std::env::var("IA1_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| ValidationError(format!("IA1_THREADS must be a positive integer, got {v:?}")))?;
    if n == 0 {
        anyhow::bail!(ValidationError("IA1_THREADS must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let seed = cli.seed;
    match &cli.command {
        Command::Generate(a) => commands::generate(a, seed),
        Command::Schedule(a) => commands::schedule(a, seed),
        Command::Train(a) => commands::train_cmd(a, seed),
        Command::Eval(a) => commands::eval(a),
        Command::Pipeline(a) => pipeline::pipeline(&a.config, a.out_dir.as_deref(), seed),
        Command::Verify(a) => pipeline::verify(&a.manifest, &a.out_dir),
        Command::Report(a) => commands::report(a),
        Command::ConvertOld(a) => commands::convert_old(a),
        Command::Synth(a) => commands::synth(a, seed),
        Command::Experiment(a) => commands::experiment(a, seed),
    }
}
