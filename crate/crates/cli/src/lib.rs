//! The `cog` command surface: one subcommand per pipeline stage plus
//! `run`, which drives a whole experiment from a JSON config.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.

pub mod args;
pub mod artifacts;
pub mod backend;
pub mod bench;
pub mod commands;
pub mod error;
pub mod pipeline;

use serde_json::Value;

use cog_core::Exec;

pub use args::Cli;
pub use error::{CliError, CliResult};

/// Executes one parsed command line and returns its JSON summary.
pub fn execute(cli: &Cli) -> CliResult<Value> {
    use args::Command::*;
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };
    match &cli.command {
        Ingest(a) => commands::ingest(a),
        Segment(a) => commands::segment(a, exec),
        BuildIndex(a) => commands::build(a, exec),
        TrainToy(a) => commands::train(a, exec),
        Generate(a) => commands::generate(a, exec),
        Eval(a) => commands::eval(a),
        Bench(a) => commands::run_bench(a, exec),
        Run(a) => pipeline::run(a, exec),
    }
}
