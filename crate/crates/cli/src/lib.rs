//! Command-line workflows around the `mixflow` library: synthesize data, solve,
//! evaluate, reproduce ensemble experiments, and check gradients. Every command
//! writes a manifest from which it can be replayed bit for bit.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use mixflow::FlowConfig;

pub mod commands;
pub mod manifest;
pub mod presets;

use manifest::{ArtifactWriter, FileDigest, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "mixflow", version, about = "Reconstruct mixed-unitary quantum channels from state pairs")]
pub struct Cli {
    /// Directory that receives all artifacts.
    #[arg(long, global = true, env = "MIXFLOW_OUT_DIR", default_value = ".")]
    pub out_dir: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a random (or depolarizing) channel and a dataset of state pairs from it.
    Synth(commands::synth::SynthArgs),
    /// Fit a mixed-unitary channel to a dataset.
    Solve(commands::solve::SolveArgs),
    /// Compare a recovered channel with a reference channel on a dataset.
    Eval(commands::eval::EvalArgs),
    /// Run a built-in or user-supplied ensemble experiment.
    Repro(commands::repro::ReproArgs),
    /// Check analytic gradients against central finite differences.
    Gradcheck(commands::gradcheck::GradcheckArgs),
    /// Re-execute a command from its manifest and verify the artifacts are identical.
    Replay(commands::replay::ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Solve(_) => "solve",
            Command::Eval(_) => "eval",
            Command::Repro(_) => "repro",
            Command::Gradcheck(_) => "gradcheck",
            Command::Replay(_) => "replay",
        }
    }
}

/// How a command ended when it did not fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Converged,
    /// Stopped on `t_max` or `max_steps`.
    BudgetStop,
}

impl Outcome {
    pub fn exit_code(self) -> u8 {
        match self {
            Outcome::Converged => 0,
            Outcome::BudgetStop => 2,
        }
    }
}

/// Flags mirroring `FlowConfig`; unset flags keep the value from `--config` or the defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct FlowArgs {
    /// JSON file with (some of) the flow configuration fields.
    #[arg(long = "config")]
    pub config_file: Option<PathBuf>,
    #[arg(long)]
    pub abs_tol: Option<f64>,
    #[arg(long)]
    pub rel_tol: Option<f64>,
    #[arg(long)]
    pub objective_tol: Option<f64>,
    #[arg(long)]
    pub grad_tol: Option<f64>,
    #[arg(long)]
    pub p_zero_threshold: Option<f64>,
    #[arg(long)]
    pub unitarity_tol: Option<f64>,
    #[arg(long)]
    pub renorm_interval: Option<usize>,
    #[arg(long)]
    pub t_max: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub samples_per_decade: Option<usize>,
    #[arg(long)]
    pub first_sample: Option<f64>,
}

impl FlowArgs {
    /// Applies the config file and then the individual flags on top of `base`.
    pub fn resolve(&self, base: FlowConfig, inputs: &mut Vec<FileDigest>) -> Result<FlowConfig> {
        let mut cfg = match &self.config_file {
            Some(path) => {
                inputs.push(manifest::digest_input(path)?);
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing flow config {}", path.display()))?
            }
            None => base,
        };
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { cfg.$f = v; } )* };
        }
        set!(
            abs_tol,
            rel_tol,
            objective_tol,
            grad_tol,
            p_zero_threshold,
            unitarity_tol,
            renorm_interval,
            t_max,
            max_steps,
            samples_per_decade,
            first_sample
        );
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Per-invocation context shared by the commands.
#[derive(Debug, Clone)]
pub struct Invocation {
    pub argv: Vec<String>,
    pub working_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Invocation {
    pub fn new(argv: Vec<String>, out_dir: &Path) -> Result<Self> {
        let working_dir = std::env::current_dir().context("reading the working directory")?;
        let out_dir = std::path::absolute(out_dir).with_context(|| format!("resolving {}", out_dir.display()))?;
        Ok(Self { argv, working_dir, out_dir })
    }

    pub fn writer(&self) -> Result<ArtifactWriter> {
        ArtifactWriter::new(&self.out_dir)
    }

    /// Writes `<command>.manifest.json` next to the artifacts.
    pub fn finish(
        &self,
        command: &str,
        config: serde_json::Value,
        seed: Option<u64>,
        inputs: Vec<FileDigest>,
        writer: ArtifactWriter,
    ) -> Result<RunManifest> {
        let mut artifacts = writer.into_artifacts();
        artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        let m = RunManifest {
            command: command.to_string(),
            argv: self.argv.clone(),
            working_dir: self.working_dir.clone(),
            out_dir: self.out_dir.clone(),
            config,
            seed,
            inputs,
            artifacts,
            version: env!("CARGO_PKG_VERSION").to_string(),
        };
        let path = self.out_dir.join(RunManifest::file_name(command));
        std::fs::write(&path, m.to_json()).with_context(|| format!("writing {}", path.display()))?;
        Ok(m)
    }
}

/// Parses `argv` (without the program name) and runs the command.
pub fn execute(argv: Vec<String>) -> Result<Outcome> {
    let cli = Cli::try_parse_from(std::iter::once("mixflow".to_string()).chain(argv.iter().cloned()))?;
    let inv = Invocation::new(argv, &cli.out_dir)?;
    dispatch(&cli.command, &inv)
}

pub fn dispatch(command: &Command, inv: &Invocation) -> Result<Outcome> {
    match command {
        Command::Synth(a) => commands::synth::run(a, inv),
        Command::Solve(a) => commands::solve::run(a, inv),
        Command::Eval(a) => commands::eval::run(a, inv),
        Command::Repro(a) => commands::repro::run(a, inv),
        Command::Gradcheck(a) => commands::gradcheck::run(a, inv),
        Command::Replay(a) => commands::replay::run(a, inv),
    }
}
