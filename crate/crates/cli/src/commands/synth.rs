use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use mixflow::channel::{channel_to_json, sha256_hex};
use mixflow::{generate_dataset, Dataset, DatasetHeader};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::presets::TruthSpec;
use crate::{Invocation, Outcome};

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Hilbert space dimension of a random channel.
    #[arg(long, default_value_t = 2, conflicts_with = "depolarizing")]
    pub dim: usize,
    /// Number of unitary components of a random channel.
    #[arg(long, default_value_t = 1, conflicts_with = "depolarizing")]
    pub rank: usize,
    /// Use the single-qubit depolarizing channel with this p instead of a random channel.
    #[arg(long)]
    pub depolarizing: Option<f64>,
    /// Number of input/output pairs.
    #[arg(long = "pairs", short = 'm', default_value_t = 1)]
    pub pairs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "channel.json")]
    pub channel_out: PathBuf,
    #[arg(long, default_value = "dataset.json")]
    pub dataset_out: PathBuf,
}

impl SynthArgs {
    fn truth(&self) -> Result<TruthSpec> {
        if let Some(p) = self.depolarizing {
            return Ok(TruthSpec::Depolarizing { p });
        }
        if self.dim == 0 || self.rank == 0 {
            bail!("--dim and --rank must be at least 1");
        }
        Ok(TruthSpec::Random { dim: self.dim, rank: self.rank })
    }
}

pub fn run(args: &SynthArgs, inv: &Invocation) -> Result<Outcome> {
    if args.pairs == 0 {
        bail!("--pairs must be at least 1");
    }
    let spec = args.truth()?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let channel = spec.build(&mut rng)?;
    let pairs = generate_dataset(&channel, args.pairs, &mut rng)?;
    let channel_json = channel_to_json(&channel);
    let dataset = Dataset {
        header: DatasetHeader {
            dim: channel.dim(),
            m: args.pairs,
            seed: args.seed,
            channel_sha: Some(sha256_hex(channel_json.as_bytes())),
        },
        pairs,
    };

    let mut w = inv.writer()?;
    w.write(&rel(&args.channel_out), &channel_json)?;
    w.write(&rel(&args.dataset_out), &dataset.to_json())?;
    let config = json!({ "truth": spec, "pairs": args.pairs });
    let manifest = inv.finish("synth", config, Some(args.seed), Vec::new(), w)?;
    print!("{}", manifest.to_json());
    Ok(Outcome::Converged)
}

/// Output names are taken relative to the output directory.
pub(crate) fn rel(p: &std::path::Path) -> String {
    p.to_string_lossy().into_owned()
}
