//! Data-fit objective `f = ½ Σ_j ‖σ_j − Σ_k p_k U_k ρ_j U_k*‖_F²`, its
//! gradients, and the projected descent field on `Δ^{r−1} × S_n^r`.
//!
//! The unitary gradient uses the leave-one-out residual `A_k − σ` rather than
//! the full residual. The difference is `2 p_k² U_k ρ²`, whose projection onto
//! the tangent space at a unitary `U_k` vanishes, so the flow is unchanged.
//! Directional derivatives therefore only agree with finite differences
//! along tangent directions.

use crate::channel::StatePair;
use crate::error::{dim_err, Error, Result};
use crate::linalg::{
    frobenius_norm, gemm, gemm_adj_left, gemm_adj_right, real_inner_unchecked, skew_part_into,
    ComplexMatrix, C64,
};

/// The observed data `{(ρ_j, σ_j)}` defining `f`.
#[derive(Debug, Clone)]
pub struct ObjectiveInstance {
    dim: usize,
    pairs: Vec<StatePair>,
    work: WorkingSet,
}

/// The data in the form the flow evaluates: either the pairs themselves or,
/// when there are more pairs than real dimensions of the Hermitian matrices,
/// `n²` Hermitian surrogate pairs with the same objective up to `offset`.
///
/// With `x_j` the real coordinates of `ρ_j` and `Xᵀ = QR`, every linear map
/// `Φ` satisfies `Σ_j ‖σ_j − Φ(ρ_j)‖² = Σ_i ‖σ'_i − Φ(ρ'_i)‖² + ‖S(I − QQᵀ)‖²`
/// with `ρ'_i` the `i`-th row of `R` and `σ'_i = Σ_j Q_ji σ_j`.
#[derive(Debug, Clone)]
struct WorkingSet {
    /// Number of (possibly surrogate) pairs.
    d: usize,
    /// Inputs and outputs stored plane-wise: entry `(a, b)` of pair `j` at `(a·n + b)·d + j`.
    rho: Planes,
    sigma: Planes,
    /// `Σ_j ‖ρ_j‖²`.
    rho_sq_total: f64,
    offset: f64,
}

#[derive(Debug, Clone)]
struct Planes {
    re: Vec<f64>,
    im: Vec<f64>,
}

impl Planes {
    fn zeros(len: usize) -> Self {
        Self { re: vec![0.0; len], im: vec![0.0; len] }
    }

    fn from_matrices(ms: &[ComplexMatrix]) -> Self {
        let d = ms.len();
        let n = ms[0].rows();
        let mut out = Self::zeros(n * n * d);
        for (j, m) in ms.iter().enumerate() {
            for a in 0..n {
                for b in 0..n {
                    out.re[(a * n + b) * d + j] = m[(a, b)].re;
                    out.im[(a * n + b) * d + j] = m[(a, b)].im;
                }
            }
        }
        out
    }
}

impl WorkingSet {
    fn new(dim: usize, pairs: &[StatePair]) -> Self {
        let (inputs, outputs, offset) = if pairs.len() <= dim * dim {
            let inputs = pairs.iter().map(|p| p.input.as_matrix().clone()).collect();
            let outputs = pairs.iter().map(|p| p.output.as_matrix().clone()).collect();
            (inputs, outputs, 0.0)
        } else {
            Self::reduce(dim, pairs)
        };
        let rho_sq_total = inputs.iter().map(|x: &ComplexMatrix| frobenius_norm(x).powi(2)).sum();
        Self {
            d: inputs.len(),
            rho: Planes::from_matrices(&inputs),
            sigma: Planes::from_matrices(&outputs),
            rho_sq_total,
            offset,
        }
    }

    fn reduce(dim: usize, pairs: &[StatePair]) -> (Vec<ComplexMatrix>, Vec<ComplexMatrix>, f64) {
        let (m, d) = (pairs.len(), dim * dim);
        let coords: Vec<Vec<f64>> = pairs.iter().map(|p| hermitian_coords(&p.input)).collect();
        let xt = nalgebra::DMatrix::<f64>::from_fn(m, d, |j, c| coords[j][c]);
        let qr = xt.qr();
        let (q, r) = (qr.q(), qr.r());
        let inputs = (0..d).map(|i| from_hermitian_coords(dim, |c| r[(i, c)])).collect();
        let outputs: Vec<ComplexMatrix> = (0..d)
            .map(|i| {
                let mut acc = ComplexMatrix::zeros(dim, dim);
                for (j, pair) in pairs.iter().enumerate() {
                    acc.axpy(q[(j, i)], &pair.output);
                }
                acc
            })
            .collect();
        // Part of the outputs no linear map of the inputs can reach.
        let mut offset = 0.0;
        for (j, pair) in pairs.iter().enumerate() {
            let mut rest = pair.output.as_matrix().clone();
            for (i, out) in outputs.iter().enumerate() {
                rest.axpy(-q[(j, i)], out);
            }
            offset += 0.5 * frobenius_norm(&rest).powi(2);
        }
        (inputs, outputs, offset)
    }
}

fn sum_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Isometric real coordinates of a Hermitian matrix: diagonal, then `√2 Re`, `√2 Im` of the strict upper triangle.
fn hermitian_coords(h: &ComplexMatrix) -> Vec<f64> {
    let n = h.rows();
    let mut v: Vec<f64> = (0..n).map(|a| h[(a, a)].re).collect();
    for b in 0..n {
        for a in 0..b {
            v.push(std::f64::consts::SQRT_2 * h[(a, b)].re);
            v.push(std::f64::consts::SQRT_2 * h[(a, b)].im);
        }
    }
    v
}

fn from_hermitian_coords(n: usize, coord: impl Fn(usize) -> f64) -> ComplexMatrix {
    let mut h = ComplexMatrix::zeros(n, n);
    for a in 0..n {
        h[(a, a)] = coord(a).into();
    }
    let mut c = n;
    for b in 0..n {
        for a in 0..b {
            let z = C64::new(coord(c), coord(c + 1)) * std::f64::consts::FRAC_1_SQRT_2;
            h[(a, b)] = z;
            h[(b, a)] = z.conj();
            c += 2;
        }
    }
    h
}

impl ObjectiveInstance {
    pub fn new(pairs: Vec<StatePair>) -> Result<Self> {
        let first = pairs
            .first()
            .ok_or_else(|| Error::InvalidArgument("objective needs at least one state pair".into()))?;
        let dim = first.input.dim();
        for (j, p) in pairs.iter().enumerate() {
            if p.input.dim() != dim || p.output.dim() != dim {
                return Err(dim_err(format!("pair {j} does not have dimension {dim}")));
            }
        }
        let work = WorkingSet::new(dim, &pairs);
        Ok(Self { dim, pairs, work })
    }

    pub fn single(pair: StatePair) -> Self {
        Self::new(vec![pair]).expect("one pair is always consistent")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn pairs(&self) -> &[StatePair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    fn check(&self, p: &[f64], us: &[ComplexMatrix]) -> Result<()> {
        if p.is_empty() {
            return Err(Error::InvalidArgument("no active components".into()));
        }
        if p.len() != us.len() {
            return Err(dim_err(format!("{} weights for {} unitaries", p.len(), us.len())));
        }
        for (k, u) in us.iter().enumerate() {
            if u.shape() != (self.dim, self.dim) {
                return Err(dim_err(format!(
                    "unitary {k} is {}x{}, data is {}-dimensional",
                    u.rows(),
                    u.cols(),
                    self.dim
                )));
            }
        }
        Ok(())
    }

    /// Objective value. `p` need not lie exactly on the simplex.
    pub fn value(&self, p: &[f64], us: &[ComplexMatrix]) -> Result<f64> {
        self.check(p, us)?;
        let n = self.dim;
        let mut ux = ComplexMatrix::zeros(n, n);
        let mut term = ComplexMatrix::zeros(n, n);
        let mut total = 0.0;
        for pair in &self.pairs {
            let mut resid = pair.output.as_matrix().scale(-1.0);
            for (pk, u) in p.iter().zip(us) {
                gemm(&mut ux, u, &pair.input);
                gemm_adj_right(&mut term, &ux, u);
                resid.axpy(*pk, &term);
            }
            total += 0.5 * frobenius_norm(&resid).powi(2);
        }
        Ok(total)
    }

    /// `A_k = Σ_{i≠k} p_i U_i ρ_j U_i*` for pair `j`.
    pub fn leave_one_out(&self, p: &[f64], us: &[ComplexMatrix], j: usize, k: usize) -> Result<ComplexMatrix> {
        self.check(p, us)?;
        if j >= self.pairs.len() {
            return Err(Error::IndexOutOfRange { index: j, len: self.pairs.len() });
        }
        if k >= p.len() {
            return Err(Error::IndexOutOfRange { index: k, len: p.len() });
        }
        let n = self.dim;
        let rho = self.pairs[j].input.as_matrix();
        let mut acc = ComplexMatrix::zeros(n, n);
        let mut ux = ComplexMatrix::zeros(n, n);
        let mut term = ComplexMatrix::zeros(n, n);
        for (i, (pi, u)) in p.iter().zip(us).enumerate() {
            if i == k {
                continue;
            }
            gemm(&mut ux, u, rho);
            gemm_adj_right(&mut term, &ux, u);
            acc.axpy(*pi, &term);
        }
        acc.hermitian_part()
    }

    /// Euclidean gradients: `∂f/∂p_k` and `G_k = ∂f/∂U_k^ℜ + i ∂f/∂U_k^ℑ`.
    pub fn gradient(&self, p: &[f64], us: &[ComplexMatrix]) -> Result<GradientBundle> {
        self.check(p, us)?;
        let mut ev = FlowEvaluator::new(self.dim, p.len());
        ev.accumulate_gradient(self, p, us);
        Ok(GradientBundle { dp: ev.dp.clone(), du: ev.grad.clone() })
    }

    /// Projected descent field.
    pub fn flow_field(&self, p: &[f64], us: &[ComplexMatrix]) -> Result<FlowField> {
        self.check(p, us)?;
        let r = p.len();
        let mut ev = FlowEvaluator::new(self.dim, r);
        let mut field = FlowField {
            dp_dt: vec![0.0; r],
            du_dt: vec![ComplexMatrix::zeros(self.dim, self.dim); r],
        };
        ev.eval(self, p, us, &mut field.dp_dt, &mut field.du_dt);
        Ok(field)
    }
}

/// Partial derivatives of `f` at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    /// `∂f/∂p_k`.
    pub dp: Vec<f64>,
    /// `∂f/∂U_k^ℜ + i ∂f/∂U_k^ℑ`.
    pub du: Vec<ComplexMatrix>,
}

impl GradientBundle {
    /// Directional derivative along `(δp, ΔU)`: `Σ_k δp_k ∂f/∂p_k + Re⟨G_k, ΔU_k⟩`.
    pub fn directional(&self, dp: &[f64], du: &[ComplexMatrix]) -> f64 {
        assert_eq!(dp.len(), self.dp.len());
        assert_eq!(du.len(), self.du.len());
        let a: f64 = self.dp.iter().zip(dp).map(|(g, d)| g * d).sum();
        let b: f64 = self.du.iter().zip(du).map(|(g, d)| real_inner_unchecked(g, d)).sum();
        a + b
    }
}

/// Time derivative of `(p, U_1, …, U_r)` under the descent flow.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub dp_dt: Vec<f64>,
    pub du_dt: Vec<ComplexMatrix>,
}

impl FlowField {
    /// `sqrt(‖dp/dt‖² + Σ_k ‖dU_k/dt‖_F²)`.
    pub fn norm(&self) -> f64 {
        let a: f64 = self.dp_dt.iter().map(|x| x * x).sum();
        let b: f64 = self.du_dt.iter().map(|m| frobenius_norm(m).powi(2)).sum();
        (a + b).sqrt()
    }
}

/// Reusable scratch space for repeated field evaluations at a fixed `(n, r)`.
///
/// All pairs are processed together: every intermediate `n × n` matrix is
/// held plane-wise with the pair index innermost, so the inner loops run over
/// pairs rather than over the (small) matrix dimension.
#[derive(Debug, Clone)]
pub struct FlowEvaluator {
    n: usize,
    r: usize,
    d: usize,
    /// `U_k ρ_j` for all `k`, `j`.
    w: Vec<Planes>,
    /// `U_k ρ_j U_k*`.
    x: Vec<Planes>,
    resid: Planes,
    tmp: Planes,
    acc_re: Vec<f64>,
    acc_im: Vec<f64>,
    mat: ComplexMatrix,
    mat2: ComplexMatrix,
    dp: Vec<f64>,
    grad: Vec<ComplexMatrix>,
}

impl FlowEvaluator {
    pub fn new(n: usize, r: usize) -> Self {
        let z = ComplexMatrix::zeros(n, n);
        Self {
            n,
            r,
            d: 0,
            w: Vec::new(),
            x: Vec::new(),
            resid: Planes::zeros(0),
            tmp: Planes::zeros(0),
            acc_re: Vec::new(),
            acc_im: Vec::new(),
            mat: z.clone(),
            mat2: z.clone(),
            dp: vec![0.0; r],
            grad: vec![z; r],
        }
    }

    pub fn components(&self) -> usize {
        self.r
    }

    fn ensure_capacity(&mut self, d: usize) {
        if self.d == d {
            return;
        }
        let len = self.n * self.n * d;
        self.d = d;
        self.w = vec![Planes::zeros(len); self.r];
        self.x = vec![Planes::zeros(len); self.r];
        self.resid = Planes::zeros(len);
        self.tmp = Planes::zeros(len);
        self.acc_re = vec![0.0; d];
        self.acc_im = vec![0.0; d];
    }

    /// Fills `self.dp`, `self.grad`; returns the objective value.
    fn accumulate_gradient(&mut self, inst: &ObjectiveInstance, p: &[f64], us: &[ComplexMatrix]) -> f64 {
        debug_assert_eq!(p.len(), self.r);
        debug_assert_eq!(inst.dim, self.n);
        let work = &inst.work;
        self.ensure_capacity(work.d);
        let (n, d) = (self.n, self.d);

        self.resid.re.iter_mut().zip(&work.sigma.re).for_each(|(o, s)| *o = -s);
        self.resid.im.iter_mut().zip(&work.sigma.im).for_each(|(o, s)| *o = -s);
        for k in 0..self.r {
            let u = &us[k];
            let (w, x) = (&mut self.w[k], &mut self.x[k]);
            // W = U ρ
            w.re.fill(0.0);
            w.im.fill(0.0);
            for a in 0..n {
                for b in 0..n {
                    let (ur, ui) = (u[(a, b)].re, u[(a, b)].im);
                    for c in 0..n {
                        let src = (b * n + c) * d;
                        let dst = (a * n + c) * d;
                        let (rr, ri) = (&work.rho.re[src..src + d], &work.rho.im[src..src + d]);
                        let (wr, wi) = (&mut w.re[dst..dst + d], &mut w.im[dst..dst + d]);
                        for ((wr, wi), (&rr, &ri)) in wr.iter_mut().zip(wi.iter_mut()).zip(rr.iter().zip(ri)) {
                            *wr += ur * rr - ui * ri;
                            *wi += ur * ri + ui * rr;
                        }
                    }
                }
            }
            // X = W U*, upper triangle then mirrored
            for a in 0..n {
                for c in a..n {
                    let dst = (a * n + c) * d;
                    let (xr, xi) = (&mut x.re[dst..dst + d], &mut x.im[dst..dst + d]);
                    xr.fill(0.0);
                    xi.fill(0.0);
                    for b in 0..n {
                        let (vr, vi) = (u[(c, b)].re, u[(c, b)].im);
                        let src = (a * n + b) * d;
                        let (wr, wi) = (&w.re[src..src + d], &w.im[src..src + d]);
                        for ((xr, xi), (&wr, &wi)) in xr.iter_mut().zip(xi.iter_mut()).zip(wr.iter().zip(wi)) {
                            *xr += wr * vr + wi * vi;
                            *xi += wi * vr - wr * vi;
                        }
                    }
                    if a == c {
                        xi.fill(0.0);
                    }
                }
                for c in 0..a {
                    let (src, dst) = ((c * n + a) * d, (a * n + c) * d);
                    x.re.copy_within(src..src + d, dst);
                    x.im.copy_within(src..src + d, dst);
                    x.im[dst..dst + d].iter_mut().for_each(|v| *v = -*v);
                }
            }
            let pk = p[k];
            self.resid.re.iter_mut().zip(&x.re).for_each(|(o, v)| *o += pk * v);
            self.resid.im.iter_mut().zip(&x.im).for_each(|(o, v)| *o += pk * v);
        }
        let value = 0.5 * (sum_sq(&self.resid.re) + sum_sq(&self.resid.im));

        for (k, &pk) in p.iter().enumerate().take(self.r) {
            let (w, x) = (&self.w[k], &self.x[k]);
            // A_k − σ = residual − p_k X_k
            self.tmp.re.iter_mut().zip(&self.resid.re).zip(&x.re).for_each(|((t, r), v)| *t = r - pk * v);
            self.tmp.im.iter_mut().zip(&self.resid.im).zip(&x.im).for_each(|((t, r), v)| *t = r - pk * v);
            self.dp[k] = dot(&self.tmp.re, &x.re) + dot(&self.tmp.im, &x.im) + pk * work.rho_sq_total;
            // G_k = 2 p_k Σ_j (A_k − σ)_j U_k ρ_j
            let g = &mut self.grad[k];
            for a in 0..n {
                for c in 0..n {
                    self.acc_re.fill(0.0);
                    self.acc_im.fill(0.0);
                    for b in 0..n {
                        let (s1, s2) = ((a * n + b) * d, (b * n + c) * d);
                        let (tr, ti) = (&self.tmp.re[s1..s1 + d], &self.tmp.im[s1..s1 + d]);
                        let (wr, wi) = (&w.re[s2..s2 + d], &w.im[s2..s2 + d]);
                        let acc = self.acc_re.iter_mut().zip(self.acc_im.iter_mut());
                        for ((ar, ai), ((&tr, &ti), (&wr, &wi))) in acc.zip(tr.iter().zip(ti).zip(wr.iter().zip(wi))) {
                            *ar += tr * wr - ti * wi;
                            *ai += tr * wi + ti * wr;
                        }
                    }
                    let re: f64 = self.acc_re.iter().sum();
                    let im: f64 = self.acc_im.iter().sum();
                    g[(a, c)] = C64::new(2.0 * pk * re, 2.0 * pk * im);
                }
            }
        }
        value + work.offset
    }

    /// Writes the projected field into `dp_dt`/`du_dt`; returns the objective value.
    pub fn eval(
        &mut self,
        inst: &ObjectiveInstance,
        p: &[f64],
        us: &[ComplexMatrix],
        dp_dt: &mut [f64],
        du_dt: &mut [ComplexMatrix],
    ) -> f64 {
        let value = self.accumulate_gradient(inst, p, us);
        let mean = self.dp.iter().sum::<f64>() / self.r as f64;
        for (out, g) in dp_dt.iter_mut().zip(&self.dp) {
            *out = mean - g;
        }
        for k in 0..self.r {
            gemm_adj_left(&mut self.mat, &us[k], &self.grad[k]);
            skew_part_into(&mut self.mat2, &self.mat);
            gemm(&mut du_dt[k], &us[k], &self.mat2);
            for v in du_dt[k].as_mut_slice() {
                *v = -*v;
            }
        }
        value
    }
}
