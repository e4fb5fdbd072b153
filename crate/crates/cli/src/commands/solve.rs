use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::Args;
use mixflow::channel::{channel_to_json, load_channel};
use mixflow::{run as run_flow, Dataset, FlowConfig, InitialGuess, ObjectiveInstance, RecoveryReport, RunError, Tolerances};
use serde_json::json;

use crate::manifest::digest_input;
use crate::{FlowArgs, Invocation, Outcome};

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Number of components of the random initial guess.
    #[arg(long, short = 'R', default_value_t = 10, conflicts_with = "init")]
    pub components: usize,
    /// Start from this channel instead of a random guess.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Reference channel; adds the Choi distance to the report.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Seeds the random initial guess.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Record wall-clock time in the report (makes it non-reproducible).
    #[arg(long)]
    pub timing: bool,
    #[command(flatten)]
    pub flow: FlowArgs,
}

pub fn run(args: &SolveArgs, inv: &Invocation) -> Result<Outcome> {
    let tol = Tolerances::default();
    let mut inputs = vec![digest_input(&args.dataset)?];
    let dataset = Dataset::load(&args.dataset, &tol)?;
    let cfg = FlowConfig { seed: args.seed, ..args.flow.resolve(FlowConfig::default(), &mut inputs)? };
    let guess = match &args.init {
        Some(path) => {
            inputs.push(digest_input(path)?);
            let c = load_channel(path, &tol)?;
            if c.dim() != dataset.header.dim {
                bail!("initial channel has dimension {}, dataset has {}", c.dim(), dataset.header.dim);
            }
            InitialGuess::from_channel(&c)
        }
        None => {
            if args.components == 0 {
                bail!("--components must be at least 1");
            }
            InitialGuess::Random { components: args.components }
        }
    };
    let truth = match &args.truth {
        Some(path) => {
            inputs.push(digest_input(path)?);
            Some(load_channel(path, &tol)?)
        }
        None => None,
    };

    let inst = ObjectiveInstance::new(dataset.pairs.clone())?;
    let mut w = inv.writer()?;
    let started = Instant::now();
    let config = json!({ "flow": cfg, "components": args.init.is_none().then_some(args.components) });
    let run = match run_flow(&inst, guess, &cfg) {
        Ok(run) => run,
        Err(RunError::Integration { failure, partial }) => {
            w.write("trajectory.csv", &partial.trajectory.to_csv())?;
            w.write("events.json", &partial.trajectory.events_json())?;
            inv.finish("solve", config, Some(cfg.seed), inputs, w)?;
            bail!("integration failed: {failure}");
        }
        Err(RunError::Invalid(e)) => return Err(e).context("invalid solver input"),
    };
    let mut report = RecoveryReport::from_run(&run, &cfg, &dataset.pairs, truth.as_ref(), &tol)?;
    if args.timing {
        report.wall_time = Some(started.elapsed().as_secs_f64());
    }

    w.write("result.json", &channel_to_json(&run.channel))?;
    w.write("trajectory.csv", &run.trajectory.to_csv())?;
    w.write("events.json", &run.trajectory.events_json())?;
    w.write("report.json", &report.to_json())?;
    inv.finish("solve", config, Some(cfg.seed), inputs, w)?;

    print!("stop {:?}, rank {} -> {}, f = {:e}, restarts {}", run.stop, run.initial_components, report.final_rank, run.final_objective, report.restarts);
    if let Some(d) = report.choi_distance {
        print!(", choi distance {d:e}");
    }
    println!();
    Ok(if run.stop.is_converged() { Outcome::Converged } else { Outcome::BudgetStop })
}
