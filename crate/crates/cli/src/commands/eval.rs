use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use mixflow::channel::load_channel;
use mixflow::{Dataset, RecoveryReport, Tolerances};
use serde_json::json;

use crate::manifest::digest_input;
use crate::{Invocation, Outcome};

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub recovered: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Report file name inside the output directory.
    #[arg(long, default_value = "eval.json")]
    pub report: PathBuf,
}

pub fn run(args: &EvalArgs, inv: &Invocation) -> Result<Outcome> {
    let tol = Tolerances::default();
    let inputs = vec![digest_input(&args.truth)?, digest_input(&args.recovered)?, digest_input(&args.dataset)?];
    let truth = load_channel(&args.truth, &tol)?;
    let recovered = load_channel(&args.recovered, &tol)?;
    let dataset = Dataset::load(&args.dataset, &tol)?;
    if truth.dim() != recovered.dim() || truth.dim() != dataset.header.dim {
        bail!(
            "dimension mismatch: truth {}, recovered {}, dataset {}",
            truth.dim(),
            recovered.dim(),
            dataset.header.dim
        );
    }
    let report = RecoveryReport::compare(&truth, &recovered, &dataset.pairs, &tol)?;
    let json = report.to_json();
    let mut w = inv.writer()?;
    w.write(&super::synth::rel(&args.report), &json)?;
    inv.finish("eval", json!({}), None, inputs, w)?;
    print!("{json}");
    Ok(Outcome::Converged)
}
