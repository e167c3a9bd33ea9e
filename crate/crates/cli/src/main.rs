//! `kgtyper`: one entry point for every pipeline stage. Each subcommand
//! resolves its settings (flags over `--config` over defaults), runs, and
//! leaves a run manifest in its output directory.

mod commands;
mod error;
mod manifest;
mod settings;

use std::process::ExitCode;

use clap::{ArgMatches, Command};

use crate::commands::Subcommand;
use crate::error::CliError;
use crate::manifest::RunManifest;

fn cli(subs: &[Subcommand]) -> Command {
    Command::new("kgtyper")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Detect wrong type assertions in a knowledge graph")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommands(subs.iter().map(|s| s.spec.command()))
}

fn run(sub: &Subcommand, matches: &ArgMatches) -> Result<(), CliError> {
    let settings = sub.spec.resolve(matches)?;
    let threads: usize = settings.parse("threads")?;
    if threads == 0 {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Run(e.to_string()))?;
    let mut manifest = RunManifest::new(&settings);
    let result = (sub.run)(&settings, &mut manifest);
    // A usage error means no work was done; anything else is recorded.
    if !matches!(result, Err(CliError::Usage(_))) {
        manifest.result(
            "status",
            result
                .as_ref()
                .map_or_else(|e| format!("failed ({})", e.code()), |_| "ok".into()),
        );
        match manifest.write() {
            Ok(p) => log::info!("manifest written to {}", p.display()),
            Err(e) if result.is_ok() => return Err(e),
            Err(e) => log::warn!("could not write the manifest: {e}"),
        }
    }
    result
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let subs = commands::all();
    let matches = match cli(&subs).try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let (name, sub_matches) = matches.subcommand().expect("subcommand required");
    let sub = subs
        .iter()
        .find(|s| s.spec.name == name)
        .expect("registered subcommand");
    match run(sub, sub_matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kgtyper {name}: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
