use anyhow::{bail, Context, Result};
use mixflow::metrics::HistogramSpec;
use mixflow::{depolarizing, FlowConfig, MixedUnitaryChannel};
use rand::Rng;
use serde::{Deserialize, Serialize};

const BUILTIN: [(&str, &str); 3] = [
    ("example1-single", include_str!("../presets/example1-single.json")),
    ("example1-multi", include_str!("../presets/example1-multi.json")),
    ("example2-depol", include_str!("../presets/example2-depol.json")),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TruthSpec {
    Random { dim: usize, rank: usize },
    Depolarizing { p: f64 },
}

impl TruthSpec {
    pub fn build<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<MixedUnitaryChannel> {
        match *self {
            TruthSpec::Random { dim, rank } => {
                if dim == 0 || rank == 0 {
                    bail!("random truth needs dim >= 1 and rank >= 1");
                }
                Ok(MixedUnitaryChannel::random(dim, rank, rng))
            }
            TruthSpec::Depolarizing { p } => Ok(depolarizing(p)?),
        }
    }
}

/// An experiment: a true channel, how much data to draw from it, and how to run the flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preset {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub truth: TruthSpec,
    pub pairs: usize,
    /// Initial number of mixture components.
    pub components: usize,
    pub runs: usize,
    /// Draw a fresh channel and dataset for every run instead of sharing one.
    #[serde(default)]
    pub resample_data: bool,
    #[serde(default)]
    pub config: FlowConfig,
    #[serde(default)]
    pub histogram: HistogramSpec,
}

impl Preset {
    pub fn builtin(name: &str) -> Result<Self> {
        let text = BUILTIN
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t)
            .with_context(|| format!("unknown experiment '{name}' (known: {})", names().join(", ")))?;
        Self::from_json(text, name)
    }

    pub fn from_json(text: &str, context: &str) -> Result<Self> {
        let p: Preset = serde_json::from_str(text).with_context(|| format!("parsing preset {context}"))?;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pairs == 0 || self.components == 0 || self.runs == 0 {
            bail!("preset {}: pairs, components and runs must be at least 1", self.name);
        }
        self.config.validate()?;
        self.histogram.validate()?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("serializable");
        s.push('\n');
        s
    }
}

pub fn names() -> Vec<&'static str> {
    BUILTIN.iter().map(|(n, _)| *n).collect()
}
