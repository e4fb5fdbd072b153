use anyhow::{bail, Result};
use clap::Args;
use mixflow::gradcheck::{default_cases, gradcheck};
use serde_json::json;

use crate::{Invocation, Outcome};

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    /// Random points per (n, r, m) case.
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fail when the worst relative error exceeds this.
    #[arg(long, default_value_t = 1e-6)]
    pub tolerance: f64,
}

pub fn run(args: &GradcheckArgs, inv: &Invocation) -> Result<Outcome> {
    let summary = gradcheck(&default_cases(), args.samples, args.step, args.seed)?;
    for c in &summary.cases {
        println!("n={} r={} m={}  max rel error {:.3e}", c.case.dim, c.case.rank, c.case.pairs, c.max_rel_error);
    }
    println!("max relative error {:e}", summary.max_rel_error);

    let mut json = serde_json::to_string_pretty(&summary)?;
    json.push('\n');
    let mut w = inv.writer()?;
    w.write("gradcheck.json", &json)?;
    let config = json!({ "samples": args.samples, "step": args.step, "tolerance": args.tolerance });
    inv.finish("gradcheck", config, Some(args.seed), Vec::new(), w)?;
    if !(summary.max_rel_error <= args.tolerance) {
        bail!("max relative error {:e} exceeds {:e}", summary.max_rel_error, args.tolerance);
    }
    Ok(Outcome::Converged)
}
