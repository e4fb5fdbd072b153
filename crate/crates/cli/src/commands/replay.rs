use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser};

use crate::manifest::{compare_artifacts, RunManifest};
use crate::{dispatch, Cli, Invocation, Outcome};

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}

/// Re-runs the recorded command into the current output directory and checks
/// every artifact against the recorded hash.
pub fn run(args: &ReplayArgs, inv: &Invocation) -> Result<Outcome> {
    let recorded = RunManifest::load(&args.manifest)?;
    if recorded.command == "replay" {
        bail!("a replay manifest cannot itself be replayed");
    }
    recorded.check_inputs()?;
    let cli = Cli::try_parse_from(std::iter::once("mixflow".to_string()).chain(recorded.argv.iter().cloned()))
        .context("parsing the recorded arguments")?;
    let replay = Invocation { argv: recorded.argv.clone(), working_dir: recorded.working_dir.clone(), out_dir: inv.out_dir.clone() };

    // Relative input paths in the recorded arguments refer to the original working directory.
    let here = std::env::current_dir()?;
    std::env::set_current_dir(&recorded.working_dir)
        .with_context(|| format!("entering {}", recorded.working_dir.display()))?;
    let outcome = dispatch(&cli.command, &replay);
    std::env::set_current_dir(here)?;
    let outcome = outcome?;

    let produced = RunManifest::load(&inv.out_dir.join(RunManifest::file_name(&recorded.command)))?;
    let bad = compare_artifacts(&recorded.artifacts, &produced.artifacts);
    if !bad.is_empty() {
        bail!("replay differs from the manifest: {}", bad.join("; "));
    }
    println!("replay identical: {} artifacts", produced.artifacts.len());
    Ok(outcome)
}
