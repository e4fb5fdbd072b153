//! Locating the first time a mixture weight drops to the removal threshold.

use super::integrator::AcceptedStep;

/// Weight trajectories over one step, typically a step's dense output.
pub trait WeightPath {
    fn t_start(&self) -> f64;
    fn t_end(&self) -> f64;
    fn count(&self) -> usize;
    fn weight(&self, k: usize, t: f64) -> f64;
}

/// The first `count` components of an accepted step's state are the weights.
pub struct StepWeights<'a> {
    pub step: &'a AcceptedStep,
    pub count: usize,
}

impl WeightPath for StepWeights<'_> {
    fn t_start(&self) -> f64 {
        self.step.t0
    }

    fn t_end(&self) -> f64 {
        self.step.t1()
    }

    fn count(&self) -> usize {
        self.count
    }

    fn weight(&self, k: usize, t: f64) -> f64 {
        self.step.dense_component(k, t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing {
    /// Earliest time at which the weight is at or below the threshold.
    pub t_hat: f64,
    pub index: usize,
}

/// Interior probes per step; a weight that dips and recovers between probes is missed.
const PROBES: usize = 8;
const MAX_BISECTIONS: usize = 200;

/// Bisection resolution at time `t`.
pub fn time_tolerance(t: f64) -> f64 {
    1e-10 * t.abs().max(1.0)
}

/// Earliest downward crossing of `threshold` by any weight within the path's interval.
///
/// Ties within the time tolerance go to the smallest index.
pub fn detect_zero_crossing(path: &impl WeightPath, threshold: f64) -> Option<Crossing> {
    let (t0, t1) = (path.t_start(), path.t_end());
    if !(t1 > t0) {
        return None;
    }
    let probe = |i: usize| {
        if i == PROBES {
            t1
        } else {
            t0 + (t1 - t0) * i as f64 / PROBES as f64
        }
    };
    let mut found: Vec<Crossing> = Vec::new();
    for k in 0..path.count() {
        if path.weight(k, t0) <= threshold {
            continue;
        }
        for i in 1..=PROBES {
            let t = probe(i);
            if path.weight(k, t) <= threshold {
                let t_hat = bisect(path, k, threshold, probe(i - 1), t);
                found.push(Crossing { t_hat, index: k });
                break;
            }
        }
    }
    let earliest = found.iter().map(|c| c.t_hat).fold(f64::INFINITY, f64::min);
    let tol = time_tolerance(earliest);
    found
        .into_iter()
        .filter(|c| c.t_hat <= earliest + tol)
        .min_by_key(|c| c.index)
}

/// Shrinks `[lo, hi]` (weight above the threshold at `lo`, at or below at `hi`) to the time tolerance.
fn bisect(path: &impl WeightPath, k: usize, threshold: f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..MAX_BISECTIONS {
        if hi - lo <= time_tolerance(hi) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if path.weight(k, mid) <= threshold {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}
