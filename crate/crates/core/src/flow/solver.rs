//! Event-driven integration of the projected flow with component removal.
//!
//! The state is integrated as one flat real vector
//! `[p_1..p_r, Re U_1[0], Im U_1[0], …]` (column-major entries per unitary).
//! When a weight reaches the zero threshold inside a step, the step is cut at
//! the located time, the vanished components are dropped, and integration
//! restarts on the smaller problem with a fresh step-size estimate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::events::{detect_zero_crossing, StepWeights};
use super::integrator::{AcceptedStep, Dopri5, StepControl, StepFailure, VectorField};
use super::trajectory::{RestartEvent, Sample, TrajectoryRecord};
use crate::channel::{random_simplex, MixedUnitaryChannel};
use crate::error::{dim_err, Error, Result};
use crate::linalg::{haar_random_unitary, re_unitarize, ComplexMatrix, C64};
use crate::objective::{FlowEvaluator, ObjectiveInstance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Stop once `f ≤ objective_tol`.
    pub objective_tol: f64,
    /// Stop once the field norm is at most this.
    pub grad_tol: f64,
    /// Weights at or below this are treated as zero and removed.
    pub p_zero_threshold: f64,
    /// Re-unitarize any `U_k` whose `‖U*U − I‖_F` exceeds this.
    pub unitarity_tol: f64,
    /// Accepted steps between weight renormalisations.
    pub renorm_interval: usize,
    pub t_max: f64,
    pub max_steps: usize,
    /// Seeds the random initial guess.
    pub seed: u64,
    /// Log-spaced trajectory samples per decade of `t`, starting at `first_sample`.
    pub samples_per_decade: usize,
    pub first_sample: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            abs_tol: 1e-12,
            rel_tol: 1e-12,
            objective_tol: 1e-17,
            grad_tol: 1e-10,
            p_zero_threshold: 1e-12,
            unitarity_tol: 1e-10,
            renorm_interval: 50,
            t_max: 1e7,
            max_steps: 1_000_000,
            seed: 0,
            samples_per_decade: 20,
            first_sample: 1e-4,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("abs_tol", self.abs_tol),
            ("rel_tol", self.rel_tol),
            ("objective_tol", self.objective_tol),
            ("grad_tol", self.grad_tol),
            ("p_zero_threshold", self.p_zero_threshold),
            ("unitarity_tol", self.unitarity_tol),
            ("t_max", self.t_max),
            ("first_sample", self.first_sample),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.renorm_interval == 0 || self.max_steps == 0 || self.samples_per_decade == 0 {
            return Err(Error::InvalidArgument(
                "renorm_interval, max_steps and samples_per_decade must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Allowed increase of `f` between samples, `100 · abs_tol`.
    pub fn descent_slack(&self) -> f64 {
        100.0 * self.abs_tol
    }

    fn step_control(&self) -> StepControl {
        StepControl::new(self.abs_tol, self.rel_tol)
    }
}

/// Point `(t, p, U_1..U_r)` on the flow together with the original labels of the active components.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub t: f64,
    pub active: Vec<usize>,
    pub p: Vec<f64>,
    pub us: Vec<ComplexMatrix>,
}

impl SolverState {
    pub fn new(p: Vec<f64>, us: Vec<ComplexMatrix>) -> Result<Self> {
        if p.is_empty() || p.len() != us.len() {
            return Err(dim_err(format!("{} weights for {} unitaries", p.len(), us.len())));
        }
        let n = us[0].rows();
        if us.iter().any(|u| u.shape() != (n, n)) {
            return Err(dim_err("unitaries must all be square of the same size"));
        }
        Ok(Self { t: 0.0, active: (0..p.len()).collect(), p, us })
    }

    pub fn from_channel(c: &MixedUnitaryChannel) -> Self {
        let us = c.unitaries().iter().map(|u| u.as_matrix().clone()).collect();
        Self::new(c.weights().to_vec(), us).expect("channel is consistent")
    }

    pub fn rank(&self) -> usize {
        self.p.len()
    }

    pub fn dim(&self) -> usize {
        self.us[0].rows()
    }

    pub fn sum_p(&self) -> f64 {
        self.p.iter().sum()
    }

    pub fn unitarity_defect(&self) -> f64 {
        self.us.iter().map(|u| u.unitarity_defect()).fold(0.0, f64::max)
    }

    /// Weights in original indexing over `total` components; removed ones are 0.
    pub fn full_weights(&self, total: usize) -> Vec<f64> {
        let mut w = vec![0.0; total];
        for (&k, &p) in self.active.iter().zip(&self.p) {
            w[k] = p;
        }
        w
    }

    /// Channel built from the state: weights clipped at 0 and normalised, unitaries polar-projected.
    pub fn to_channel(&self) -> Result<MixedUnitaryChannel> {
        let clipped: Vec<f64> = self.p.iter().map(|&p| p.max(0.0)).collect();
        let s: f64 = clipped.iter().sum();
        if !(s > 0.0) {
            return Err(Error::CorruptedState(format!("weights sum to {s}")));
        }
        let weights = exact_unit_sum(clipped.iter().map(|p| p / s).collect());
        let us = self.us.iter().map(re_unitarize).collect::<Result<Vec<_>>>()?;
        MixedUnitaryChannel::new(weights, us)
    }

    fn packed_len(&self) -> usize {
        packed_len(self.rank(), self.dim())
    }

    fn pack(&self, y: &mut [f64]) {
        let r = self.rank();
        y[..r].copy_from_slice(&self.p);
        pack_unitaries(&self.us, &mut y[r..]);
    }

    fn unpack(&mut self, y: &[f64]) {
        let r = self.rank();
        self.p.copy_from_slice(&y[..r]);
        unpack_unitaries(&y[r..], &mut self.us);
    }
}

fn packed_len(r: usize, n: usize) -> usize {
    r + 2 * r * n * n
}

fn pack_unitaries(us: &[ComplexMatrix], y: &mut [f64]) {
    let mut i = 0;
    for u in us {
        for z in u.as_slice() {
            y[i] = z.re;
            y[i + 1] = z.im;
            i += 2;
        }
    }
}

fn unpack_unitaries(y: &[f64], us: &mut [ComplexMatrix]) {
    let mut i = 0;
    for u in us {
        for z in u.as_mut_slice() {
            *z = C64::new(y[i], y[i + 1]);
            i += 2;
        }
    }
}

/// Rescales so the weights sum to 1, then absorbs the residual rounding into the largest weight.
fn exact_unit_sum(mut p: Vec<f64>) -> Vec<f64> {
    let s: f64 = p.iter().sum();
    for v in &mut p {
        *v /= s;
    }
    let big = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).expect("non-empty");
    for _ in 0..4 {
        let s: f64 = p.iter().sum();
        if s == 1.0 {
            break;
        }
        p[big] += 1.0 - s;
    }
    p
}

/// Restores `Σ p = 1` and re-unitarizes any unitary whose drift exceeds `unitarity_tol`.
pub fn renormalize_state(mut state: SolverState, unitarity_tol: f64) -> Result<SolverState> {
    let s = state.sum_p();
    if !(s > 0.0) {
        return Err(Error::CorruptedState(format!("weights sum to {s}")));
    }
    if (s - 1.0).abs() > 0.01 {
        return Err(Error::CorruptedState(format!("weights sum to {s}, too far from 1 to renormalise")));
    }
    if s != 1.0 {
        state.p = exact_unit_sum(std::mem::take(&mut state.p));
    }
    for u in &mut state.us {
        if u.unitarity_defect() > unitarity_tol {
            *u = re_unitarize(u)?.into_inner();
        }
    }
    Ok(state)
}

/// The projected field on the flat state, with scratch space.
struct Field<'a> {
    inst: &'a ObjectiveInstance,
    eval: FlowEvaluator,
    p: Vec<f64>,
    us: Vec<ComplexMatrix>,
    dp: Vec<f64>,
    du: Vec<ComplexMatrix>,
}

impl<'a> Field<'a> {
    fn new(inst: &'a ObjectiveInstance, r: usize) -> Self {
        let n = inst.dim();
        let z = ComplexMatrix::zeros(n, n);
        Self {
            inst,
            eval: FlowEvaluator::new(n, r),
            p: vec![0.0; r],
            us: vec![z.clone(); r],
            dp: vec![0.0; r],
            du: vec![z; r],
        }
    }
}

impl VectorField for Field<'_> {
    fn eval(&mut self, y: &[f64], dy: &mut [f64]) -> f64 {
        let r = self.p.len();
        self.p.copy_from_slice(&y[..r]);
        unpack_unitaries(&y[r..], &mut self.us);
        let f = self.eval.eval(self.inst, &self.p, &self.us, &mut self.dp, &mut self.du);
        dy[..r].copy_from_slice(&self.dp);
        pack_unitaries(&self.du, &mut dy[r..]);
        f
    }
}

/// Diagnostics of one accepted step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    pub t0: f64,
    pub h: f64,
    /// Scaled local error estimate.
    pub error: f64,
    pub rejections: usize,
    /// Objective at the end of the step.
    pub objective: f64,
    pub field_norm: f64,
    pub sum_p: f64,
    /// Unitarity defect before any re-unitarization.
    pub unitarity_defect: f64,
    pub renormalized: bool,
}

/// Adaptive stepper bound to one objective and a fixed number of active components.
pub struct FlowIntegrator<'a> {
    field: Field<'a>,
    dopri: Dopri5,
    cfg: FlowConfig,
    y: Vec<f64>,
    steps_since_renorm: usize,
}

impl<'a> FlowIntegrator<'a> {
    pub fn new(inst: &'a ObjectiveInstance, cfg: &FlowConfig, state: &SolverState) -> Result<Self> {
        if state.dim() != inst.dim() {
            return Err(dim_err(format!(
                "state is {}-dimensional, data is {}-dimensional",
                state.dim(),
                inst.dim()
            )));
        }
        let mut field = Field::new(inst, state.rank());
        let mut y = vec![0.0; state.packed_len()];
        state.pack(&mut y);
        let h_max = (cfg.t_max - state.t).max(f64::MIN_POSITIVE);
        let dopri = Dopri5::new(cfg.step_control(), &mut field, &y, h_max);
        Ok(Self { field, dopri, cfg: cfg.clone(), y, steps_since_renorm: 0 })
    }

    /// Objective at the current point.
    pub fn objective(&self) -> f64 {
        self.dopri.aux()
    }

    /// Euclidean norm of the field at the current point.
    pub fn field_norm(&self) -> f64 {
        norm(self.dopri.derivative())
    }

    pub fn evaluations(&self) -> usize {
        self.dopri.evaluations()
    }

    /// Takes one step from the current point without committing it.
    fn attempt(&mut self, t: f64) -> std::result::Result<AcceptedStep, StepFailure> {
        let h_max = self.cfg.t_max - t;
        self.dopri.step(&mut self.field, t, &self.y, h_max)
    }

    /// Re-evaluates after an external change to `state`, keeping the step size.
    fn resync(&mut self, state: &SolverState) {
        state.pack(&mut self.y);
        self.dopri.refresh(&mut self.field, &self.y);
    }

    /// Commits `y1` as the current point and applies the periodic or breach-triggered renormalisation.
    fn commit(&mut self, state: &mut SolverState, step: &AcceptedStep) -> Result<StepDiagnostics> {
        self.y.copy_from_slice(&step.y1);
        state.unpack(&step.y1);
        state.t = step.t1();
        self.steps_since_renorm += 1;
        let sum_p = state.sum_p();
        let defect = state.unitarity_defect();
        let renormalized = defect > self.cfg.unitarity_tol || self.steps_since_renorm >= self.cfg.renorm_interval;
        if renormalized {
            *state = renormalize_state(std::mem::replace(state, placeholder()), self.cfg.unitarity_tol)?;
            self.resync(state);
            self.steps_since_renorm = 0;
        }
        Ok(StepDiagnostics {
            t0: step.t0,
            h: step.h,
            error: step.error,
            rejections: step.rejections,
            objective: self.objective(),
            field_norm: self.field_norm(),
            sum_p,
            unitarity_defect: defect,
            renormalized,
        })
    }

    /// Advances `state` by one adaptive step, ignoring weight crossings.
    pub fn integrate_step(&mut self, state: &mut SolverState) -> std::result::Result<StepDiagnostics, RunError> {
        let step = self.attempt(state.t).map_err(|failure| RunError::Integration {
            failure,
            partial: Box::new(PartialRun { state: state.clone(), trajectory: TrajectoryRecord::default() }),
        })?;
        Ok(self.commit(state, &step)?)
    }

    /// Objective, field norm and unitarity defect at a flat state `y`.
    fn probe(&mut self, y: &[f64], scratch: &mut [f64]) -> (f64, f64, f64) {
        let f = self.field.eval(y, scratch);
        let defect = self.field.us.iter().map(|u| u.unitarity_defect()).fold(0.0, f64::max);
        (f, norm(scratch), defect)
    }
}

fn placeholder() -> SolverState {
    SolverState { t: 0.0, active: Vec::new(), p: Vec::new(), us: Vec::new() }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Starting point of a run.
#[derive(Debug, Clone)]
pub enum InitialGuess {
    Given { weights: Vec<f64>, unitaries: Vec<ComplexMatrix> },
    /// Haar unitaries and uniform simplex weights drawn from `FlowConfig::seed`.
    Random { components: usize },
}

impl InitialGuess {
    pub fn from_channel(c: &MixedUnitaryChannel) -> Self {
        Self::Given {
            weights: c.weights().to_vec(),
            unitaries: c.unitaries().iter().map(|u| u.as_matrix().clone()).collect(),
        }
    }

    fn into_state(self, n: usize, cfg: &FlowConfig) -> Result<SolverState> {
        let state = match self {
            Self::Given { weights, unitaries } => {
                if let Some((k, p)) = weights.iter().enumerate().find(|(_, p)| !(**p >= 0.0)) {
                    return Err(Error::InvalidArgument(format!("initial weight {k} = {p} is negative")));
                }
                SolverState::new(weights, unitaries)?
            }
            Self::Random { components } => {
                if components == 0 {
                    return Err(Error::InvalidArgument("need at least one component".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                let us = (0..components).map(|_| haar_random_unitary(n, &mut rng).into_inner()).collect();
                let p = random_simplex(components, &mut rng);
                SolverState::new(p, us)?
            }
        };
        if state.dim() != n {
            return Err(dim_err(format!("initial guess is {}-dimensional, data is {n}-dimensional", state.dim())));
        }
        renormalize_state(state, cfg.unitarity_tol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    ObjectiveTol,
    GradTol,
    TimeLimit,
    StepLimit,
}

impl StopReason {
    /// Whether the run ended at a (local) minimizer rather than a budget limit.
    pub fn is_converged(self) -> bool {
        matches!(self, Self::ObjectiveTol | Self::GradTol)
    }
}

#[derive(Debug, Clone)]
pub struct FlowRun {
    pub state: SolverState,
    pub trajectory: TrajectoryRecord,
    pub channel: MixedUnitaryChannel,
    pub stop: StopReason,
    pub initial_components: usize,
    pub steps: usize,
    pub evaluations: usize,
    pub final_objective: f64,
    pub final_field_norm: f64,
    /// Largest `|Σ p − 1|` seen before any renormalisation.
    pub max_sum_drift: f64,
    /// Largest unitarity defect seen before any re-unitarization.
    pub max_unitarity_defect: f64,
}

/// What was computed before an integration failure.
#[derive(Debug, Clone)]
pub struct PartialRun {
    pub state: SolverState,
    pub trajectory: TrajectoryRecord,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Invalid(#[from] Error),
    #[error("integration failed: {failure}")]
    Integration { failure: StepFailure, partial: Box<PartialRun> },
}

/// Log-spaced sample times `first · 10^{i/per_decade}`.
struct SampleGrid {
    first: f64,
    per_decade: f64,
    next: u32,
}

impl SampleGrid {
    fn time(&self, i: u32) -> f64 {
        self.first * 10f64.powf(i as f64 / self.per_decade)
    }

    fn skip_to(&mut self, t: f64) {
        while self.time(self.next) <= t {
            self.next += 1;
        }
    }

    /// Grid times in `(.., t]` (or `(.., t)` when `inclusive` is false), consumed.
    fn drain_until(&mut self, t: f64, inclusive: bool) -> Vec<f64> {
        let mut out = Vec::new();
        loop {
            let g = self.time(self.next);
            if g < t || (inclusive && g == t) {
                out.push(g);
                self.next += 1;
            } else {
                return out;
            }
        }
    }
}

struct Recorder {
    total: usize,
    rec: TrajectoryRecord,
    max_sum_drift: f64,
    max_defect: f64,
}

impl Recorder {
    #[allow(clippy::too_many_arguments)]
    fn sample(&mut self, t: f64, objective: f64, field_norm: f64, defect: f64, state: &SolverState, event: bool) {
        if self.rec.last_time().is_some_and(|last| t <= last) {
            return;
        }
        let sum_p = state.sum_p();
        self.max_sum_drift = self.max_sum_drift.max((sum_p - 1.0).abs());
        self.max_defect = self.max_defect.max(defect);
        self.rec.push(Sample {
            t,
            objective,
            weights: state.full_weights(self.total),
            sum_p,
            field_norm,
            unitarity_defect: defect,
            event,
        });
    }
}

/// Runs the flow with component removal until a stopping rule fires.
pub fn run(inst: &ObjectiveInstance, guess: InitialGuess, cfg: &FlowConfig) -> std::result::Result<FlowRun, RunError> {
    cfg.validate()?;
    let mut state = guess.into_state(inst.dim(), cfg)?;
    let total = state.rank();
    let mut recorder = Recorder { total, rec: TrajectoryRecord::default(), max_sum_drift: 0.0, max_defect: 0.0 };

    // Components that start at zero weight are dropped before integrating.
    let dead: Vec<usize> = (0..state.rank()).filter(|&i| state.p[i] <= cfg.p_zero_threshold).collect();
    if !dead.is_empty() {
        remove_components(&mut state, &dead, total, &mut recorder.rec, cfg)?;
    }

    let mut integ = FlowIntegrator::new(inst, cfg, &state)?;
    let mut evaluations = 0;
    let mut grid = SampleGrid { first: cfg.first_sample, per_decade: cfg.samples_per_decade as f64, next: 0 };
    grid.skip_to(state.t);
    let defect = state.unitarity_defect();
    recorder.sample(state.t, integ.objective(), integ.field_norm(), defect, &state, false);

    let mut steps = 0;
    let mut scratch_state = state.clone();
    let stop = loop {
        if integ.objective() <= cfg.objective_tol {
            break StopReason::ObjectiveTol;
        }
        if integ.field_norm() <= cfg.grad_tol {
            break StopReason::GradTol;
        }
        if state.t >= cfg.t_max {
            break StopReason::TimeLimit;
        }
        if steps >= cfg.max_steps {
            break StopReason::StepLimit;
        }
        let step = match integ.attempt(state.t) {
            Ok(s) => s,
            Err(failure) => {
                return Err(RunError::Integration {
                    failure,
                    partial: Box::new(PartialRun { state, trajectory: recorder.rec }),
                })
            }
        };
        steps += 1;
        let crossing = detect_zero_crossing(&StepWeights { step: &step, count: state.rank() }, cfg.p_zero_threshold);
        let t_end = crossing.map_or(step.t1(), |c| c.t_hat);

        let mut ybuf = vec![0.0; step.y1.len()];
        let mut dy = vec![0.0; step.y1.len()];
        for tg in grid.drain_until(t_end, crossing.is_none()) {
            step.dense(tg, &mut ybuf);
            let (f, g, d) = integ.probe(&ybuf, &mut dy);
            scratch_state.unpack(&ybuf);
            recorder.sample(tg, f, g, d, &scratch_state, false);
        }

        match crossing {
            None => {
                let diag = integ.commit(&mut state, &step)?;
                recorder.max_sum_drift = recorder.max_sum_drift.max((diag.sum_p - 1.0).abs());
                recorder.max_defect = recorder.max_defect.max(diag.unitarity_defect);
                if diag.renormalized {
                    scratch_state = state.clone();
                }
            }
            Some(c) => {
                step.dense(c.t_hat, &mut ybuf);
                let (f, g, d) = integ.probe(&ybuf, &mut dy);
                state.unpack(&ybuf);
                state.t = c.t_hat;
                recorder.sample(c.t_hat, f, g, d, &state, true);
                let mut gone: Vec<usize> =
                    (0..state.rank()).filter(|&i| state.p[i] <= cfg.p_zero_threshold).collect();
                if !gone.contains(&c.index) {
                    gone.push(c.index);
                    gone.sort_unstable();
                }
                evaluations += integ.evaluations();
                remove_components(&mut state, &gone, total, &mut recorder.rec, cfg)?;
                integ = FlowIntegrator::new(inst, cfg, &state)?;
                scratch_state = state.clone();
            }
        }
    };
    evaluations += integ.evaluations();

    let final_objective = integ.objective();
    let final_field_norm = integ.field_norm();
    let defect = state.unitarity_defect();
    recorder.sample(state.t, final_objective, final_field_norm, defect, &state, false);
    let channel = state.to_channel()?;
    Ok(FlowRun {
        state,
        trajectory: recorder.rec,
        channel,
        stop,
        initial_components: total,
        steps,
        evaluations,
        final_objective,
        final_field_norm,
        max_sum_drift: recorder.max_sum_drift,
        max_unitarity_defect: recorder.max_defect,
    })
}

/// Drops the components at positions `gone` (sorted) and records one event per removal.
fn remove_components(
    state: &mut SolverState,
    gone: &[usize],
    total: usize,
    rec: &mut TrajectoryRecord,
    cfg: &FlowConfig,
) -> Result<()> {
    assert!(gone.len() < state.rank(), "every component would be removed");
    let p_before = state.full_weights(total);
    for &i in gone {
        rec.events.push(RestartEvent { t_hat: state.t, removed_index: state.active[i], p_before: p_before.clone() });
    }
    for &i in gone.iter().rev() {
        state.active.remove(i);
        state.p.remove(i);
        state.us.remove(i);
    }
    let taken = std::mem::replace(state, placeholder());
    *state = renormalize_state(taken, cfg.unitarity_tol)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_dataset, MixedUnitaryChannel};
    use crate::linalg::{haar_random_unitary, skew_part};
    use rand::Rng;

    fn instance(n: usize, r: usize, m: usize, seed: u64) -> (MixedUnitaryChannel, ObjectiveInstance) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = MixedUnitaryChannel::random(n, r, &mut rng);
        let pairs = generate_dataset(&c, m, &mut rng).unwrap();
        (c, ObjectiveInstance::new(pairs).unwrap())
    }

    fn random_state(n: usize, r: usize, seed: u64) -> SolverState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let us = (0..r).map(|_| haar_random_unitary(n, &mut rng).into_inner()).collect();
        SolverState::new(random_simplex(r, &mut rng), us).unwrap()
    }

    #[test]
    fn pack_round_trip() {
        let s = random_state(3, 2, 1);
        let mut y = vec![0.0; s.packed_len()];
        s.pack(&mut y);
        let mut t = random_state(3, 2, 2);
        t.unpack(&y);
        assert_eq!(s.p, t.p);
        assert_eq!(s.us, t.us);
    }

    #[test]
    fn renormalize_feasible_state_is_identity() {
        let s = random_state(3, 3, 3);
        let mut s = renormalize_state(s, 1e-12).unwrap();
        s.p = exact_unit_sum(s.p.clone());
        let before = s.clone();
        let after = renormalize_state(s, 1e-12).unwrap();
        for (a, b) in after.p.iter().zip(&before.p) {
            assert!((a - b).abs() <= 1e-15);
        }
        for (a, b) in after.us.iter().zip(&before.us) {
            assert!(a.max_abs_diff(b) <= 1e-15);
        }
    }

    #[test]
    fn renormalize_weights_arithmetic() {
        let mut s = random_state(2, 2, 4);
        s.p = vec![0.5, 0.5005];
        let s = renormalize_state(s, 1e-12).unwrap();
        assert!((s.p[0] - 0.5 / 1.0005).abs() < 1e-15);
        assert!((s.p[1] - 0.5005 / 1.0005).abs() < 1e-15);
        assert_eq!(s.p.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn renormalize_repairs_drifted_unitary() {
        let mut s = random_state(4, 2, 5);
        // U(I + εH) with H Hermitian drifts off the group at first order.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = ComplexMatrix::from_fn(4, 4, |_, _| C64::new(rng.random::<f64>(), rng.random::<f64>()));
        let h = g.hermitian_part().unwrap();
        let eps = 1e-6 / (2.0 * crate::linalg::frobenius_norm(&h));
        let drifted = &s.us[0] * &(&ComplexMatrix::identity(4) + &h.scale(eps));
        assert!((drifted.unitarity_defect() - 1e-6).abs() < 1e-8);
        s.us[0] = drifted.clone();
        let s = renormalize_state(s, 1e-12).unwrap();
        assert!(s.us[0].unitarity_defect() <= 1e-12);
        // the polar factor of U(I + εH) is U itself
        let orig = random_state(4, 2, 5).us[0].clone();
        assert!(s.us[0].max_abs_diff(&orig) < 1e-12);
    }

    #[test]
    fn renormalize_rejects_bad_sums() {
        let mut s = random_state(2, 2, 7);
        s.p = vec![-0.5, 0.5];
        assert!(matches!(renormalize_state(s.clone(), 1e-12), Err(Error::CorruptedState(_))));
        s.p = vec![0.6, 0.6];
        assert!(renormalize_state(s, 1e-12).is_err());
    }

    #[test]
    fn step_at_minimizer_leaves_state() {
        let (c, inst) = instance(3, 2, 2, 8);
        let cfg = FlowConfig::default();
        let mut state = SolverState::from_channel(&c);
        let before = state.clone();
        let mut integ = FlowIntegrator::new(&inst, &cfg, &state).unwrap();
        integ.integrate_step(&mut state).unwrap();
        for (a, b) in state.p.iter().zip(&before.p) {
            assert!((a - b).abs() <= cfg.abs_tol);
        }
        for (a, b) in state.us.iter().zip(&before.us) {
            assert!(a.max_abs_diff(b) <= cfg.abs_tol);
        }
    }

    #[test]
    fn single_step_does_not_increase_objective() {
        let cfg = FlowConfig::default();
        for seed in 0..10 {
            let (_, inst) = instance(3, 2, 2, 100 + seed);
            let mut state = random_state(3, 4, 200 + seed);
            let mut integ = FlowIntegrator::new(&inst, &cfg, &state).unwrap();
            for _ in 0..5 {
                let f0 = inst.value(&state.p, &state.us).unwrap();
                integ.integrate_step(&mut state).unwrap();
                let f1 = inst.value(&state.p, &state.us).unwrap();
                assert!(f1 <= f0 + 10.0 * cfg.abs_tol, "{f0} -> {f1}");
            }
        }
    }

    fn integrate_to(inst: &ObjectiveInstance, state: &SolverState, tol: f64, t_end: f64) -> SolverState {
        let cfg = FlowConfig { abs_tol: tol, rel_tol: tol, t_max: t_end, ..FlowConfig::default() };
        let mut s = state.clone();
        let mut integ = FlowIntegrator::new(inst, &cfg, &s).unwrap();
        while s.t < t_end {
            integ.integrate_step(&mut s).unwrap();
        }
        s
    }

    #[test]
    fn tolerance_self_convergence() {
        let (_, inst) = instance(3, 2, 1, 9);
        let start = random_state(3, 3, 10);
        let loose = integrate_to(&inst, &start, 1e-6, 2.0);
        let tight = integrate_to(&inst, &start, 1e-9, 2.0);
        assert!((loose.t - 2.0).abs() < 1e-12 && (tight.t - 2.0).abs() < 1e-12);
        let dp = loose.p.iter().zip(&tight.p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let du = loose.us.iter().zip(&tight.us).map(|(a, b)| a.max_abs_diff(b)).fold(0.0, f64::max);
        assert!(dp < 1e-5 && du < 1e-5, "{dp} {du}");
    }

    #[test]
    fn integration_preserves_tangency_structure() {
        // Along the flow U*U stays close to I and the weights to the simplex.
        let (_, inst) = instance(2, 2, 3, 11);
        let start = random_state(2, 3, 12);
        let end = integrate_to(&inst, &start, 1e-12, 5.0);
        assert!((end.sum_p() - 1.0).abs() < 1e-12);
        assert!(end.unitarity_defect() < 1e-9);
        let _ = skew_part(&end.us[0]).unwrap();
    }

    #[test]
    fn run_from_generator_stops_immediately() {
        let (c, inst) = instance(4, 3, 2, 13);
        let run = run(&inst, InitialGuess::from_channel(&c), &FlowConfig::default()).unwrap();
        assert_eq!(run.stop, StopReason::ObjectiveTol);
        assert_eq!(run.steps, 0);
        assert!(run.trajectory.events.is_empty());
        assert_eq!(run.state.t, 0.0);
    }

    #[test]
    fn run_qubit_overparameterised_fits_and_can_reduce_rank() {
        let mut reduced = 0;
        for seed in 0..10 {
            let (_, inst) = instance(2, 1, 1, 20 + seed);
            let cfg = FlowConfig { seed, ..FlowConfig::default() };
            let run = run(&inst, InitialGuess::Random { components: 2 }, &cfg).unwrap();
            let f = inst.value(&run.state.p, &run.state.us).unwrap();
            assert!(f <= 1e-12, "seed {seed}: f = {f}");
            let g = inst.value(run.channel.weights(), &run.channel.unitaries().iter().map(|u| u.as_matrix().clone()).collect::<Vec<_>>()).unwrap();
            assert!(g <= 1e-12);
            if run.state.rank() == 1 {
                reduced += 1;
                assert_eq!(run.trajectory.events.len(), 1);
            }
        }
        assert!(reduced >= 1);
    }

    #[test]
    fn run_is_deterministic() {
        let (_, inst) = instance(3, 2, 2, 30);
        let cfg = FlowConfig { seed: 5, ..FlowConfig::default() };
        let a = run(&inst, InitialGuess::Random { components: 4 }, &cfg).unwrap();
        let b = run(&inst, InitialGuess::Random { components: 4 }, &cfg).unwrap();
        assert_eq!(a.trajectory, b.trajectory);
        assert_eq!(a.trajectory.to_csv(), b.trajectory.to_csv());
    }

    #[test]
    fn trajectory_invariants_hold() {
        let (_, inst) = instance(3, 2, 1, 40);
        let cfg = FlowConfig { seed: 41, ..FlowConfig::default() };
        let run = run(&inst, InitialGuess::Random { components: 4 }, &cfg).unwrap();
        let s = &run.trajectory.samples;
        assert!(s.windows(2).all(|w| w[1].t > w[0].t));
        assert!(s.windows(2).all(|w| w[1].objective <= w[0].objective + cfg.descent_slack()));
        assert!(s.iter().all(|x| (x.sum_p - 1.0).abs() <= 1e-8));
        let mut removed = std::collections::BTreeSet::new();
        for e in &run.trajectory.events {
            assert!(removed.insert(e.removed_index));
            assert!(e.p_before[e.removed_index] <= cfg.p_zero_threshold);
        }
        for k in &removed {
            assert!(!run.state.active.contains(k));
        }
        assert!(s.iter().filter(|x| x.event).count() <= run.trajectory.events.len());
    }

    #[test]
    fn invalid_config_is_rejected() {
        let (_, inst) = instance(2, 1, 1, 50);
        let cfg = FlowConfig { abs_tol: 0.0, ..FlowConfig::default() };
        assert!(matches!(run(&inst, InitialGuess::Random { components: 2 }, &cfg), Err(RunError::Invalid(_))));
        let cfg = FlowConfig::default();
        assert!(run(&inst, InitialGuess::Random { components: 0 }, &cfg).is_err());
        let guess = InitialGuess::Given { weights: vec![1.0], unitaries: vec![ComplexMatrix::identity(3)] };
        assert!(run(&inst, guess, &cfg).is_err());
    }

    #[test]
    fn zero_initial_weight_is_removed_up_front() {
        let (c, inst) = instance(2, 1, 1, 60);
        let mut w = c.weights().to_vec();
        w.push(0.0);
        let mut us: Vec<ComplexMatrix> = c.unitaries().iter().map(|u| u.as_matrix().clone()).collect();
        us.push(ComplexMatrix::identity(2));
        let run = run(&inst, InitialGuess::Given { weights: w, unitaries: us }, &FlowConfig::default()).unwrap();
        assert_eq!(run.trajectory.events.len(), 1);
        assert_eq!(run.trajectory.events[0].removed_index, 1);
        assert_eq!(run.state.active, vec![0]);
    }
}
