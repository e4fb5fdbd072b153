use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use mixflow::channel::{channel_to_json, sha256_hex};
use mixflow::{
    batch_statistics, generate_dataset, run as run_flow, BatchSummary, Dataset, DatasetHeader, FlowConfig,
    InitialGuess, MixedUnitaryChannel, ObjectiveInstance, RecoveryReport, RunError, StatePair, StopReason,
    Tolerances,
};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::manifest::{digest_input, ArtifactWriter};
use crate::presets::{names, Preset};
use crate::{FlowArgs, Invocation, Outcome};

#[derive(Debug, Clone, Args)]
pub struct ReproArgs {
    /// Built-in experiment name.
    #[arg(required_unless_present = "preset_file", value_parser = clap::builder::PossibleValuesParser::new(names()))]
    pub experiment: Option<String>,
    /// Experiment description in the same JSON layout as `--show-preset` prints.
    #[arg(long, conflicts_with = "experiment")]
    pub preset_file: Option<PathBuf>,
    /// Print the resolved experiment as JSON and exit.
    #[arg(long)]
    pub show_preset: bool,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long = "pairs", short = 'm')]
    pub pairs: Option<usize>,
    #[arg(long, short = 'R')]
    pub components: Option<usize>,
    /// Master seed; each run derives its own stream from this and its index.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Runs executed concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Record wall-clock time in the reports (makes them non-reproducible).
    #[arg(long)]
    pub timing: bool,
    #[command(flatten)]
    pub flow: FlowArgs,
}

/// One finished (or failed) run of an experiment.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub index: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<RecoveryReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip)]
    pub truth: MixedUnitaryChannel,
    #[serde(skip)]
    pub pairs: Vec<StatePair>,
    #[serde(skip)]
    pub recovered: Option<MixedUnitaryChannel>,
}

impl RunRecord {
    pub fn stop(&self) -> Option<StopReason> {
        self.report.as_ref().and_then(|r| r.stop)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Experiment {
    pub name: String,
    pub master_seed: u64,
    pub runs: Vec<RunRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<BatchSummary>,
}

impl Experiment {
    pub fn reports(&self) -> impl Iterator<Item = &RecoveryReport> {
        self.runs.iter().filter_map(|r| r.report.as_ref())
    }
}

/// Stream 0 draws shared data; run `i` uses stream `i + 1`.
pub fn run_rng(master: u64, index: Option<usize>) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index.map_or(0, |i| i as u64 + 1));
    rng
}

struct Data {
    truth: MixedUnitaryChannel,
    dataset: Dataset,
}

fn draw_data(preset: &Preset, master: u64, rng: &mut ChaCha8Rng) -> Result<Data> {
    let truth = preset.truth.build(rng)?;
    let pairs = generate_dataset(&truth, preset.pairs, rng)?;
    let header = DatasetHeader {
        dim: truth.dim(),
        m: preset.pairs,
        seed: master,
        channel_sha: Some(sha256_hex(channel_to_json(&truth).as_bytes())),
    };
    Ok(Data { truth, dataset: Dataset { header, pairs } })
}

fn write_data(w: &Mutex<Option<&mut ArtifactWriter>>, dir: &str, data: &Data) -> Result<()> {
    if let Some(w) = w.lock().unwrap().as_mut() {
        w.write(&format!("{dir}truth.json"), &channel_to_json(&data.truth))?;
        w.write(&format!("{dir}dataset.json"), &data.dataset.to_json())?;
    }
    Ok(())
}

fn run_one(
    preset: &Preset,
    shared: Option<&Data>,
    master: u64,
    index: usize,
    timing: bool,
    writer: &Mutex<Option<&mut ArtifactWriter>>,
) -> Result<RunRecord> {
    let tol = Tolerances::default();
    let dir = format!("run-{index:03}/");
    let mut rng = run_rng(master, Some(index));
    let own;
    let data = match shared {
        Some(d) => d,
        None => {
            own = draw_data(preset, master, &mut rng)?;
            write_data(writer, &dir, &own)?;
            &own
        }
    };
    let seed = rng.next_u64();
    let cfg = FlowConfig { seed, ..preset.config.clone() };
    let inst = ObjectiveInstance::new(data.dataset.pairs.clone())?;
    let started = Instant::now();
    let outcome = run_flow(&inst, InitialGuess::Random { components: preset.components }, &cfg);
    let mut guard = writer.lock().unwrap();
    match outcome {
        Ok(run) => {
            let mut report = RecoveryReport::from_run(&run, &cfg, &data.dataset.pairs, Some(&data.truth), &tol)?;
            if timing {
                report.wall_time = Some(started.elapsed().as_secs_f64());
            }
            if let Some(w) = guard.as_mut() {
                w.write(&format!("{dir}result.json"), &channel_to_json(&run.channel))?;
                w.write(&format!("{dir}trajectory.csv"), &run.trajectory.to_csv())?;
                w.write(&format!("{dir}events.json"), &run.trajectory.events_json())?;
                w.write(&format!("{dir}report.json"), &report.to_json())?;
            }
            Ok(RunRecord {
                index,
                seed,
                report: Some(report),
                error: None,
                truth: data.truth.clone(),
                pairs: data.dataset.pairs.clone(),
                recovered: Some(run.channel),
            })
        }
        Err(RunError::Integration { failure, partial }) => {
            if let Some(w) = guard.as_mut() {
                w.write(&format!("{dir}trajectory.csv"), &partial.trajectory.to_csv())?;
                w.write(&format!("{dir}events.json"), &partial.trajectory.events_json())?;
            }
            Ok(RunRecord {
                index,
                seed,
                report: None,
                error: Some(failure.to_string()),
                truth: data.truth.clone(),
                pairs: data.dataset.pairs.clone(),
                recovered: None,
            })
        }
        Err(RunError::Invalid(e)) => Err(e.into()),
    }
}

/// Executes every run of `preset`, writing per-run artifacts as runs finish
/// when a writer is given. Results do not depend on `jobs`.
pub fn run_experiment(
    preset: &Preset,
    master_seed: u64,
    jobs: usize,
    timing: bool,
    writer: Option<&mut ArtifactWriter>,
) -> Result<Experiment> {
    preset.validate()?;
    let writer = Mutex::new(writer);
    let shared = if preset.resample_data {
        None
    } else {
        let data = draw_data(preset, master_seed, &mut run_rng(master_seed, None))?;
        write_data(&writer, "", &data)?;
        Some(data)
    };

    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<RunRecord>>>> = Mutex::new((0..preset.runs).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, preset.runs) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= preset.runs {
                    break;
                }
                let r = run_one(preset, shared.as_ref(), master_seed, i, timing, &writer);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    let mut runs = Vec::with_capacity(preset.runs);
    for (i, slot) in slots.into_inner().unwrap().into_iter().enumerate() {
        runs.push(slot.ok_or_else(|| anyhow!("run {i} did not execute"))?.with_context(|| format!("run {i}"))?);
    }

    let reports: Vec<RecoveryReport> = runs.iter().filter_map(|r| r.report.clone()).collect();
    let summary = if reports.is_empty() { None } else { Some(batch_statistics(&reports, &preset.histogram)?) };
    let exp = Experiment { name: preset.name.clone(), master_seed, runs, summary };
    if let Some(w) = writer.into_inner().unwrap() {
        let mut json = serde_json::to_string_pretty(&exp)?;
        json.push('\n');
        w.write("batch.json", &json)?;
        if let Some(s) = &exp.summary {
            w.write("histogram.csv", &s.histogram_csv())?;
        }
    }
    Ok(exp)
}

impl ReproArgs {
    pub fn resolve(&self, inputs: &mut Vec<crate::manifest::FileDigest>) -> Result<Preset> {
        let mut preset = match (&self.experiment, &self.preset_file) {
            (_, Some(path)) => {
                inputs.push(digest_input(path)?);
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                Preset::from_json(&text, &path.display().to_string())?
            }
            (Some(name), None) => Preset::builtin(name)?,
            (None, None) => bail!("name an experiment or pass --preset-file"),
        };
        if let Some(v) = self.runs {
            preset.runs = v;
        }
        if let Some(v) = self.pairs {
            preset.pairs = v;
        }
        if let Some(v) = self.components {
            preset.components = v;
        }
        preset.config = self.flow.resolve(preset.config.clone(), inputs)?;
        preset.validate()?;
        Ok(preset)
    }
}

pub fn run(args: &ReproArgs, inv: &Invocation) -> Result<Outcome> {
    let mut inputs = Vec::new();
    let preset = args.resolve(&mut inputs)?;
    if args.show_preset {
        print!("{}", preset.to_json());
        return Ok(Outcome::Converged);
    }
    let mut w = inv.writer()?;
    let exp = run_experiment(&preset, args.seed, args.jobs, args.timing, Some(&mut w))?;
    inv.finish("repro", json!(preset), Some(args.seed), inputs, w)?;

    for r in &exp.runs {
        match (&r.report, &r.error) {
            (Some(rep), _) => println!(
                "run {:3}: {:?} f = {:.3e} rank {} restarts {} choi {:.3e}",
                r.index,
                rep.stop.unwrap_or(StopReason::StepLimit),
                rep.final_objective,
                rep.final_rank,
                rep.restarts,
                rep.choi_distance.unwrap_or(f64::NAN)
            ),
            (None, Some(e)) => println!("run {:3}: failed: {e}", r.index),
            (None, None) => unreachable!(),
        }
    }
    if let Some(s) = &exp.summary {
        println!("choi distance: min {:.3e} median {:.3e} max {:.3e} over {} runs", s.min, s.median, s.max, s.runs);
    }
    let failed = exp.runs.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        bail!("{failed} of {} runs failed", exp.runs.len());
    }
    let budget = exp.runs.iter().any(|r| r.stop().is_some_and(|s| !s.is_converged()));
    Ok(if budget { Outcome::BudgetStop } else { Outcome::Converged })
}
