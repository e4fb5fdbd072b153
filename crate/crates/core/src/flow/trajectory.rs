use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// One recorded point of the flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub objective: f64,
    /// Weights in original component indexing; removed components read 0.
    pub weights: Vec<f64>,
    /// `Σ p_k` as integrated, before any renormalisation.
    pub sum_p: f64,
    pub field_norm: f64,
    /// `max_k ‖U_k*U_k − I‖_F`.
    pub unitarity_defect: f64,
    pub event: bool,
}

/// A component removal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartEvent {
    pub t_hat: f64,
    /// Index in the original numbering `0..R`.
    pub removed_index: usize,
    /// Weights just before removal, original indexing.
    pub p_before: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub samples: Vec<Sample>,
    pub events: Vec<RestartEvent>,
}

impl TrajectoryRecord {
    pub fn push(&mut self, sample: Sample) {
        if let Some(last) = self.samples.last() {
            debug_assert!(sample.t > last.t, "sample times must increase");
        }
        self.samples.push(sample);
    }

    pub fn last_time(&self) -> Option<f64> {
        self.samples.last().map(|s| s.t)
    }

    /// Columns `t, f, sum_p, field_norm, p_1..p_R, event`.
    pub fn to_csv(&self) -> String {
        let width = self.samples.first().map_or(0, |s| s.weights.len());
        let mut out = String::from("t,f,sum_p,field_norm");
        for k in 1..=width {
            write!(out, ",p_{k}").unwrap();
        }
        out.push_str(",event\n");
        for s in &self.samples {
            write!(out, "{:e},{:e},{:e},{:e}", s.t, s.objective, s.sum_p, s.field_norm).unwrap();
            for p in &s.weights {
                write!(out, ",{p:e}").unwrap();
            }
            writeln!(out, ",{}", u8::from(s.event)).unwrap();
        }
        out
    }

    pub fn events_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.events).expect("serializable");
        s.push('\n');
        s
    }
}
