//! Recovery quality and trajectory health checks.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::channel::{fidelity, MixedUnitaryChannel, StatePair};
use crate::error::{dim_err, Error, Result};
use crate::flow::{FlowConfig, FlowRun, StopReason, TrajectoryRecord};
use crate::linalg::{frobenius_norm, Tolerances};

/// `‖C(a) − C(b)‖_F`.
pub fn choi_distance(a: &MixedUnitaryChannel, b: &MixedUnitaryChannel) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(dim_err(format!("channels act on dimensions {} and {}", a.dim(), b.dim())));
    }
    let d = a.choi().as_matrix() - b.choi().as_matrix();
    Ok(frobenius_norm(&d))
}

/// Fidelity between each observed output and the channel's prediction for its input.
pub fn pair_fidelities(channel: &MixedUnitaryChannel, pairs: &[StatePair], tol: &Tolerances) -> Result<Vec<f64>> {
    pairs
        .iter()
        .map(|pair| {
            let predicted = channel.apply(&pair.input)?;
            fidelity(&pair.output, &predicted, tol)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryAudit {
    /// Sample-to-sample increases of `f` larger than the descent slack.
    pub monotone_violations: usize,
    pub max_sum_drift: f64,
    pub max_unitarity_defect: f64,
    pub restarts: usize,
}

pub fn audit_trajectory(rec: &TrajectoryRecord, cfg: &FlowConfig) -> TrajectoryAudit {
    let slack = cfg.descent_slack();
    let monotone_violations = rec
        .samples
        .windows(2)
        .filter(|w| w[1].objective > w[0].objective + slack)
        .count();
    let max_sum_drift = rec.samples.iter().map(|s| (s.sum_p - 1.0).abs()).fold(0.0, f64::max);
    let max_unitarity_defect = rec.samples.iter().map(|s| s.unitarity_defect).fold(0.0, f64::max);
    TrajectoryAudit { monotone_violations, max_sum_drift, max_unitarity_defect, restarts: rec.events.len() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    /// Absent when no reference channel was supplied.
    pub choi_distance: Option<f64>,
    pub final_objective: f64,
    pub final_rank: usize,
    pub restarts: usize,
    pub fidelity_per_pair: Vec<f64>,
    /// Seconds; omitted unless timing was requested so reports stay reproducible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<f64>,
    pub monotone_violations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<StopReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_sum_drift: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_unitarity_defect: Option<f64>,
}

impl RecoveryReport {
    /// Report for a finished run, optionally against the true channel.
    pub fn from_run(
        run: &FlowRun,
        cfg: &FlowConfig,
        pairs: &[StatePair],
        truth: Option<&MixedUnitaryChannel>,
        tol: &Tolerances,
    ) -> Result<Self> {
        let audit = audit_trajectory(&run.trajectory, cfg);
        Ok(Self {
            choi_distance: truth.map(|t| choi_distance(t, &run.channel)).transpose()?,
            final_objective: run.final_objective,
            final_rank: run.state.rank(),
            restarts: audit.restarts,
            fidelity_per_pair: pair_fidelities(&run.channel, pairs, tol)?,
            wall_time: None,
            monotone_violations: audit.monotone_violations,
            stop: Some(run.stop),
            max_sum_drift: Some(run.max_sum_drift.max(audit.max_sum_drift)),
            max_unitarity_defect: Some(run.max_unitarity_defect.max(audit.max_unitarity_defect)),
        })
    }

    /// Report comparing a recovered channel to a reference on a dataset, without a trajectory.
    pub fn compare(
        truth: &MixedUnitaryChannel,
        recovered: &MixedUnitaryChannel,
        pairs: &[StatePair],
        tol: &Tolerances,
    ) -> Result<Self> {
        let us: Vec<_> = recovered.unitaries().iter().map(|u| u.as_matrix().clone()).collect();
        let inst = crate::objective::ObjectiveInstance::new(pairs.to_vec())?;
        Ok(Self {
            choi_distance: Some(choi_distance(truth, recovered)?),
            final_objective: inst.value(recovered.weights(), &us)?,
            final_rank: recovered.rank(),
            restarts: 0,
            fidelity_per_pair: pair_fidelities(recovered, pairs, tol)?,
            wall_time: None,
            monotone_violations: 0,
            stop: None,
            max_sum_drift: None,
            max_unitarity_defect: None,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("serializable");
        s.push('\n');
        s
    }
}

/// Fixed log-spaced bins `[lo·10^{i/per_decade}, lo·10^{(i+1)/per_decade})` covering `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramSpec {
    pub lo: f64,
    pub hi: f64,
    pub per_decade: usize,
}

impl Default for HistogramSpec {
    fn default() -> Self {
        Self { lo: 1e-16, hi: 1e2, per_decade: 4 }
    }
}

impl HistogramSpec {
    pub fn bin_count(&self) -> usize {
        ((self.hi / self.lo).log10() * self.per_decade as f64).round() as usize
    }

    pub fn edge(&self, i: usize) -> f64 {
        if i == self.bin_count() {
            return self.hi;
        }
        self.lo * 10f64.powf(i as f64 / self.per_decade as f64)
    }

    /// Bin holding `x`, or `None` outside `[lo, hi)`.
    pub fn bin_of(&self, x: f64) -> Option<usize> {
        if !(x >= self.lo) || x >= self.hi {
            return None;
        }
        let nb = self.bin_count();
        let mut i = (((x / self.lo).log10() * self.per_decade as f64).floor() as usize).min(nb - 1);
        // log10 rounding can misplace values sitting on an edge
        while i > 0 && x < self.edge(i) {
            i -= 1;
        }
        while i + 1 < nb && x >= self.edge(i + 1) {
            i += 1;
        }
        Some(i)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo > 0.0 && self.hi > self.lo && self.hi.is_finite() && self.per_decade > 0) || self.bin_count() == 0 {
            return Err(Error::InvalidArgument(format!("bad histogram bins {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub runs: usize,
    pub min: f64,
    pub median: f64,
    pub max: f64,
    pub bins: Vec<HistogramBin>,
    /// Distances below the first bin (including exact zeros).
    pub underflow: usize,
    pub overflow: usize,
}

impl BatchSummary {
    /// Columns `bin_left, bin_right, count`; under- and overflow appear as `[0, lo)` and `[hi, inf)`.
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("bin_left,bin_right,count\n");
        let lo = self.bins.first().map_or(0.0, |b| b.left);
        let hi = self.bins.last().map_or(f64::INFINITY, |b| b.right);
        writeln!(out, "0e0,{lo:e},{}", self.underflow).unwrap();
        for b in &self.bins {
            writeln!(out, "{:e},{:e},{}", b.left, b.right, b.count).unwrap();
        }
        writeln!(out, "{hi:e},inf,{}", self.overflow).unwrap();
        out
    }

    /// Width of the occupied range of bins, in bins; 0 when every distance shares one bin.
    pub fn occupied_span(&self) -> usize {
        let occupied: Vec<usize> = self.bins.iter().enumerate().filter(|(_, b)| b.count > 0).map(|(i, _)| i).collect();
        match (occupied.first(), occupied.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0,
        }
    }
}

/// Summary of Choi distances over reports that carry one.
pub fn batch_statistics(reports: &[RecoveryReport], spec: &HistogramSpec) -> Result<BatchSummary> {
    spec.validate()?;
    let mut d: Vec<f64> = reports.iter().filter_map(|r| r.choi_distance).collect();
    if d.is_empty() {
        return Err(Error::InvalidArgument("no reports with a Choi distance".into()));
    }
    d.sort_by(f64::total_cmp);
    let k = d.len();
    let median = if k % 2 == 1 { d[k / 2] } else { 0.5 * (d[k / 2 - 1] + d[k / 2]) };
    let nb = spec.bin_count();
    let mut bins: Vec<HistogramBin> =
        (0..nb).map(|i| HistogramBin { left: spec.edge(i), right: spec.edge(i + 1), count: 0 }).collect();
    let (mut underflow, mut overflow) = (0, 0);
    for &x in &d {
        match spec.bin_of(x) {
            Some(i) => bins[i].count += 1,
            None if x < spec.lo => underflow += 1,
            None => overflow += 1,
        }
    }
    Ok(BatchSummary { runs: k, min: d[0], median, max: d[k - 1], bins, underflow, overflow })
}
