//! `caliper`: phantoms, annotation extraction, segmentation, biometry and
//! agreement statistics from the command line.

mod args;
mod commands;
mod config;
mod failure;
mod manifest;

use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches};

use args::{Cli, Command};
use failure::{CmdResult, Failure};
use manifest::RunManifest;

fn execute(cmd: &Command) -> CmdResult<()> {
    if let Command::Replay(r) = cmd {
        let recorded = RunManifest::read(&r.run_manifest)?;
        let mut again = recorded.invocation;
        if matches!(again, Command::Replay(_)) {
            return Err(Failure::usage("a manifest cannot record a replay"));
        }
        if let Some(out) = &r.out {
            again.set_out(out.clone());
        }
        again.common_mut().manifest = r.common.manifest.clone();
        eprintln!("replay: {} from {}", again.name(), r.run_manifest.display());
        return execute(&again);
    }
    let run = commands::run(cmd)?;
    if let Some(path) = cmd.common().manifest.clone().or(run.default_manifest) {
        RunManifest::new(cmd.clone(), run.seed, run.effective, run.outputs).write(&path)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let argv = match config::merge_config(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {}", Failure::usage(e));
            return ExitCode::from(2);
        }
    };
    let cli = Cli::command()
        .try_get_matches_from(argv)
        .and_then(|m| Cli::from_arg_matches(&m))
        .unwrap_or_else(|e| e.exit());
    match execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
