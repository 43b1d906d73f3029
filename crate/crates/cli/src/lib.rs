//! `curdpo` command-line driver: argument parsing, per-command wiring and run manifests.

use std::ffi::OsString;
use std::fs;

use clap::Parser;

use curdpo_core::{Error, ErrorKind, Result};

pub mod ablate;
pub mod args;
pub mod commands;
pub mod manifest;

pub use args::{Cli, Command};
pub use manifest::RunManifest;

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

pub fn exit_code(err: &Error) -> i32 {
    match err.kind() {
        ErrorKind::Validation => EXIT_VALIDATION,
        ErrorKind::Io => EXIT_IO,
        ErrorKind::Runtime => EXIT_RUNTIME,
    }
}

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Score(_) => "score",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::Ablate(_) => "ablate",
        Command::Stats(_) => "stats",
        Command::Synth(_) => "synth",
    }
}

/// Runs a parsed command and writes its manifest into `--out`, whether or
/// not the command succeeded. `argv` excludes the program name.
pub fn run(cli: &Cli, argv: Vec<String>) -> Result<RunManifest> {
    let out = &cli.common.out;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut manifest = RunManifest::new(command_name(&cli.command), argv);
    manifest.seed = cli.common.seed;
    let c = &cli.common;
    let result = match &cli.command {
        Command::Score(a) => commands::score(c, a, &mut manifest),
        Command::Train(a) => commands::train(c, a, &mut manifest),
        Command::Eval(a) => commands::eval(c, a, &mut manifest),
        Command::Ablate(a) => commands::ablate(c, a, &mut manifest),
        Command::Stats(a) => commands::stats(c, a, &mut manifest),
        Command::Synth(a) => commands::synth(c, a, &mut manifest),
    };
    manifest.finished_unix = manifest::now_unix();
    match &result {
        Ok(()) => manifest.status = "ok".to_owned(),
        Err(e) => {
            manifest.status = "failed".to_owned();
            manifest.error = Some(e.to_string());
        }
    }
    manifest.write(out)?;
    result.map(|()| manifest)
}

/// Parses `args` (program name first), runs, reports errors on stderr and
/// returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { 0 };
        }
    };
    let argv = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match run(&cli, argv) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
