//! Embedded Runge–Kutta 5(4) of Dormand and Prince with PI step control and
//! the standard fourth-order continuous extension.
//!
//! The integrator works on flat `f64` state vectors for autonomous systems.
//! The right-hand side may return one auxiliary scalar per evaluation (the
//! flow uses it to carry the objective value alongside the field).

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Autonomous right-hand side `dy/dt = F(y)`.
pub trait VectorField {
    /// Writes `F(y)` into `dy` and returns an auxiliary scalar.
    fn eval(&mut self, y: &[f64], dy: &mut [f64]) -> f64;
}

impl<F: FnMut(&[f64], &mut [f64]) -> f64> VectorField for F {
    fn eval(&mut self, y: &[f64], dy: &mut [f64]) -> f64 {
        self(y, dy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub safety: f64,
    /// Lower bound on `h_new / h`.
    pub min_factor: f64,
    /// Upper bound on `h_new / h`.
    pub max_factor: f64,
    /// PI stabilisation exponent.
    pub beta: f64,
    pub max_rejections: usize,
}

impl StepControl {
    pub fn new(abs_tol: f64, rel_tol: f64) -> Self {
        Self {
            abs_tol,
            rel_tol,
            safety: 0.9,
            min_factor: 0.2,
            max_factor: 10.0,
            beta: 0.04,
            max_rejections: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepFailure {
    /// Step size fell below the resolution of `t`.
    Underflow { t: f64, h: f64 },
    /// The field produced NaN or infinity.
    NonFinite { t: f64 },
    TooManyRejections { t: f64, h: f64 },
}

impl std::fmt::Display for StepFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Underflow { t, h } => write!(f, "step size underflow at t = {t:e} (h = {h:e})"),
            Self::NonFinite { t } => write!(f, "non-finite field value at t = {t:e}"),
            Self::TooManyRejections { t, h } => write!(f, "too many rejected steps at t = {t:e} (h = {h:e})"),
        }
    }
}

/// An accepted step together with its continuous extension.
#[derive(Debug, Clone)]
pub struct AcceptedStep {
    pub t0: f64,
    pub h: f64,
    pub y1: Vec<f64>,
    /// Auxiliary value returned by the field at `y1`.
    pub aux1: f64,
    /// Scaled error estimate (accepted iff ≤ 1).
    pub error: f64,
    pub rejections: usize,
    cont: [Vec<f64>; 5],
}

impl AcceptedStep {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    /// Interpolated state at `t ∈ [t0, t1]`.
    pub fn dense(&self, t: f64, out: &mut [f64]) {
        let s = (t - self.t0) / self.h;
        let s1 = 1.0 - s;
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.dense_at(i, s, s1);
        }
    }

    /// Interpolated component `i` at time `t`.
    pub fn dense_component(&self, i: usize, t: f64) -> f64 {
        let s = (t - self.t0) / self.h;
        self.dense_at(i, s, 1.0 - s)
    }

    #[inline]
    fn dense_at(&self, i: usize, s: f64, s1: f64) -> f64 {
        let c = &self.cont;
        c[0][i] + s * (c[1][i] + s1 * (c[2][i] + s * (c[3][i] + s1 * c[4][i])))
    }
}

/// Dormand–Prince 5(4) stepper.
#[derive(Debug, Clone)]
pub struct Dopri5 {
    ctl: StepControl,
    k: [Vec<f64>; 7],
    ytmp: Vec<f64>,
    /// Auxiliary value at the current point.
    aux: f64,
    h: f64,
    err_old: f64,
    last_rejected: bool,
    evaluations: usize,
}

impl Dopri5 {
    /// Prepares to integrate from `y`, evaluating the field once and choosing a starting step.
    pub fn new<F: VectorField + ?Sized>(ctl: StepControl, f: &mut F, y: &[f64], h_max: f64) -> Self {
        let n = y.len();
        let mut s = Self {
            ctl,
            k: std::array::from_fn(|_| vec![0.0; n]),
            ytmp: vec![0.0; n],
            aux: 0.0,
            h: 0.0,
            err_old: 1e-4,
            last_rejected: false,
            evaluations: 0,
        };
        s.restart(f, y, h_max);
        s
    }

    /// Re-evaluates the field at `y` and re-runs the starting-step heuristic.
    pub fn restart<F: VectorField + ?Sized>(&mut self, f: &mut F, y: &[f64], h_max: f64) {
        self.refresh(f, y);
        self.h = self.initial_step(f, y, h_max);
        self.err_old = 1e-4;
        self.last_rejected = false;
    }

    /// Re-evaluates the field at `y` (after an external modification) but keeps the step size.
    pub fn refresh<F: VectorField + ?Sized>(&mut self, f: &mut F, y: &[f64]) {
        assert_eq!(y.len(), self.k[0].len());
        self.aux = f.eval(y, &mut self.k[0]);
        self.evaluations += 1;
    }

    /// Field at the current point.
    pub fn derivative(&self) -> &[f64] {
        &self.k[0]
    }

    /// Auxiliary value at the current point.
    pub fn aux(&self) -> f64 {
        self.aux
    }

    pub fn step_size(&self) -> f64 {
        self.h
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    fn error_norm(&self, y0: &[f64], y1: &[f64], err: &[f64]) -> f64 {
        let n = y0.len();
        let mut s = 0.0;
        for i in 0..n {
            let sk = self.ctl.abs_tol + self.ctl.rel_tol * y0[i].abs().max(y1[i].abs());
            let e = err[i] / sk;
            s += e * e;
        }
        (s / n as f64).sqrt()
    }

    fn weighted_norm(&self, y: &[f64], v: &[f64]) -> f64 {
        let n = y.len();
        let s: f64 = y
            .iter()
            .zip(v)
            .map(|(yi, vi)| {
                let sk = self.ctl.abs_tol + self.ctl.rel_tol * yi.abs();
                (vi / sk).powi(2)
            })
            .sum();
        (s / n as f64).sqrt()
    }

    fn initial_step<F: VectorField + ?Sized>(&mut self, f: &mut F, y: &[f64], h_max: f64) -> f64 {
        let d0 = self.weighted_norm(y, y);
        let d1 = self.weighted_norm(y, &self.k[0]);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let h0 = h0.min(h_max);
        for ((t, &yi), &ki) in self.ytmp.iter_mut().zip(y).zip(&self.k[0]) {
            *t = yi + h0 * ki;
        }
        let mut f1 = vec![0.0; y.len()];
        f.eval(&self.ytmp, &mut f1);
        self.evaluations += 1;
        let diff: Vec<f64> = f1.iter().zip(&self.k[0]).map(|(a, b)| a - b).collect();
        let d2 = self.weighted_norm(y, &diff) / h0;
        let dmax = d1.max(d2);
        let h1 = if dmax <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / dmax).powf(1.0 / 5.0)
        };
        (100.0 * h0).min(h1).min(h_max)
    }

    /// Advances from `(t, y)` by one accepted step no longer than `h_max`.
    pub fn step<F: VectorField + ?Sized>(
        &mut self,
        f: &mut F,
        t: f64,
        y: &[f64],
        h_max: f64,
    ) -> Result<AcceptedStep, StepFailure> {
        let n = y.len();
        let mut rejections = 0;
        let expo1 = 0.2 - self.ctl.beta * 0.75;
        let mut y1 = vec![0.0; n];
        let mut err = vec![0.0; n];
        loop {
            let h = self.h.min(h_max);
            if !(h > 0.0) || t + 0.1 * h == t {
                return Err(StepFailure::Underflow { t, h });
            }
            let [k1, k2, k3, k4, k5, k6, k7] = &mut self.k;
            let yt = &mut self.ytmp;
            for i in 0..n {
                yt[i] = y[i] + h * A21 * k1[i];
            }
            f.eval(yt, k2);
            for i in 0..n {
                yt[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
            }
            f.eval(yt, k3);
            for i in 0..n {
                yt[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            f.eval(yt, k4);
            for i in 0..n {
                yt[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            f.eval(yt, k5);
            for i in 0..n {
                yt[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            f.eval(yt, k6);
            for i in 0..n {
                y1[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
            }
            let aux1 = f.eval(&y1, k7);
            self.evaluations += 6;

            if !y1.iter().chain(k7.iter()).all(|v| v.is_finite()) || !aux1.is_finite() {
                return Err(StepFailure::NonFinite { t });
            }
            for i in 0..n {
                err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            }
            let e = self.error_norm(y, &y1, &err);
            let fac11 = e.powf(expo1);
            let fac = fac11 / self.err_old.powf(self.ctl.beta);
            let fac = (fac / self.ctl.safety)
                .min(1.0 / self.ctl.min_factor)
                .max(1.0 / self.ctl.max_factor);
            if e <= 1.0 {
                let mut h_new = h / fac;
                if self.last_rejected {
                    h_new = h_new.min(h);
                }
                self.err_old = e.max(1e-4);
                self.last_rejected = false;
                self.h = h_new;

                let (k1, k3, k4, k5, k6, k7) = (&self.k[0], &self.k[2], &self.k[3], &self.k[4], &self.k[5], &self.k[6]);
                let mut cont: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; n]);
                for i in 0..n {
                    let ydiff = y1[i] - y[i];
                    let bspl = h * k1[i] - ydiff;
                    cont[0][i] = y[i];
                    cont[1][i] = ydiff;
                    cont[2][i] = bspl;
                    cont[3][i] = ydiff - h * k7[i] - bspl;
                    cont[4][i] = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
                }
                // FSAL
                self.k.swap(0, 6);
                self.aux = aux1;
                return Ok(AcceptedStep {
                    t0: t,
                    h,
                    y1,
                    aux1,
                    error: e,
                    rejections,
                    cont,
                });
            }
            rejections += 1;
            self.last_rejected = true;
            self.h = h / (1.0 / self.ctl.min_factor).min(fac11 / self.ctl.safety);
            if rejections > self.ctl.max_rejections {
                return Err(StepFailure::TooManyRejections { t, h: self.h });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn integrate(
        f: &mut impl VectorField,
        y0: &[f64],
        t_end: f64,
        tol: f64,
    ) -> (Vec<f64>, usize) {
        let ctl = StepControl::new(tol, tol);
        let mut solver = Dopri5::new(ctl, f, y0, t_end);
        let mut t = 0.0;
        let mut y = y0.to_vec();
        let mut steps = 0;
        while t < t_end {
            let s = solver.step(f, t, &y, t_end - t).unwrap();
            t = s.t1();
            y = s.y1;
            steps += 1;
        }
        (y, steps)
    }

    #[test]
    fn exponential_decay() {
        let mut f = |y: &[f64], dy: &mut [f64]| {
            dy[0] = -y[0];
            0.0
        };
        let (y, _) = integrate(&mut f, &[1.0], 5.0, 1e-12);
        assert!((y[0] - (-5.0f64).exp()).abs() < 1e-11);
    }

    #[test]
    fn harmonic_oscillator_tolerance_scaling() {
        let mut f = |y: &[f64], dy: &mut [f64]| {
            dy[0] = y[1];
            dy[1] = -y[0];
            0.0
        };
        let t_end: f64 = 10.0;
        let exact = [t_end.cos(), -t_end.sin()];
        let (loose, n_loose) = integrate(&mut f, &[1.0, 0.0], t_end, 1e-6);
        let (tight, n_tight) = integrate(&mut f, &[1.0, 0.0], t_end, 1e-10);
        let e_loose = (loose[0] - exact[0]).abs().max((loose[1] - exact[1]).abs());
        let e_tight = (tight[0] - exact[0]).abs().max((tight[1] - exact[1]).abs());
        assert!(e_loose < 1e-4, "{e_loose}");
        assert!(e_tight < 1e-8, "{e_tight}");
        assert!(n_tight > n_loose);
    }

    #[test]
    fn dense_output_is_accurate() {
        let mut f = |y: &[f64], dy: &mut [f64]| {
            dy[0] = y[1];
            dy[1] = -y[0];
            0.0
        };
        let ctl = StepControl::new(1e-10, 1e-10);
        let mut solver = Dopri5::new(ctl, &mut f, &[1.0, 0.0], 10.0);
        let mut t = 0.0;
        let mut y = vec![1.0, 0.0];
        let mut worst: f64 = 0.0;
        while t < 10.0 {
            let s = solver.step(&mut f, t, &y, 10.0 - t).unwrap();
            for i in 0..=10 {
                let tt = s.t0 + s.h * i as f64 / 10.0;
                let mut out = [0.0; 2];
                s.dense(tt, &mut out);
                worst = worst.max((out[0] - tt.cos()).abs()).max((out[1] + tt.sin()).abs());
                assert_eq!(s.dense_component(0, tt), out[0]);
            }
            // endpoints are reproduced
            let mut end = [0.0; 2];
            s.dense(s.t1(), &mut end);
            assert!((end[0] - s.y1[0]).abs() < 1e-15);
            t = s.t1();
            y = s.y1;
        }
        assert!(worst < 1e-8, "{worst}");
    }

    #[test]
    fn linear_invariants_are_preserved() {
        // dy = A y with columns summing to zero keeps Σ y constant.
        let mut f = |y: &[f64], dy: &mut [f64]| {
            dy[0] = -y[0] + 0.5 * y[1];
            dy[1] = y[0] - y[1] + y[2];
            dy[2] = 0.5 * y[1] - y[2];
            0.0
        };
        let (y, _) = integrate(&mut f, &[0.2, 0.3, 0.5], 20.0, 1e-12);
        let drift = (y.iter().sum::<f64>() - 1.0).abs();
        assert!(drift < 1e-14, "{drift}");
    }

    #[test]
    fn non_finite_field_fails() {
        let mut f = |y: &[f64], dy: &mut [f64]| {
            dy[0] = if y[0] > 1.5 { f64::NAN } else { 1.0 };
            0.0
        };
        let ctl = StepControl::new(1e-8, 1e-8);
        let mut solver = Dopri5::new(ctl, &mut f, &[1.0], 10.0);
        let mut t = 0.0;
        let mut y = vec![1.0];
        let mut failed = false;
        for _ in 0..1000 {
            match solver.step(&mut f, t, &y, 10.0) {
                Ok(s) => {
                    t = s.t1();
                    y = s.y1;
                }
                Err(_) => {
                    failed = true;
                    break;
                }
            }
        }
        assert!(failed);
    }
}
