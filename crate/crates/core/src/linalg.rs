//! Dense complex matrices and the handful of spectral tools the flow needs.
//!
//! Storage is column-major, so [`ComplexMatrix::vec`] is a plain copy of the
//! backing buffer. Decompositions (QR, SVD, Hermitian eigensolver) are
//! delegated to `nalgebra`; everything on the flow's hot path is written out
//! directly over the flat buffer.

use std::fmt;
use std::ops::{Add, AddAssign, Deref, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{dim_err, Error, Result};

pub type C64 = Complex64;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Numerical thresholds for the semantic matrix classes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Relative Hermiticity defect `‖A − A*‖_F / ‖A‖_F`.
    pub herm: f64,
    /// Smallest admissible eigenvalue is `-psd`.
    pub psd: f64,
    /// Absolute bound on `‖U*U − I‖_F`.
    pub unit: f64,
    /// Absolute bound on `|tr ρ − 1|`.
    pub trace: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            herm: 1e-12,
            psd: 1e-10,
            unit: 1e-9,
            trace: 1e-12,
        }
    }
}

/// Dense complex matrix, column-major.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for j in 0..self.cols {
                let z = self[(i, j)];
                write!(f, "{:+.6e}{:+.6e}i  ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 1, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for j in 0..cols {
            for i in 0..rows {
                m.data[i + j * rows] = f(i, j);
            }
        }
        m
    }

    /// Builds from a column-major buffer.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(dim_err(format!(
                "buffer of length {} does not describe a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds from a real diagonal.
    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = C64::new(d, 0.0);
        }
        m
    }

    /// Builds from row-major nested arrays of real and imaginary parts.
    pub fn from_parts(re: &[Vec<f64>], im: &[Vec<f64>]) -> Result<Self> {
        let rows = re.len();
        if rows == 0 || im.len() != rows {
            return Err(dim_err("real and imaginary parts must have equal, positive row counts"));
        }
        let cols = re[0].len();
        if cols == 0 {
            return Err(dim_err("matrix rows must be non-empty"));
        }
        for (i, (r, c)) in re.iter().zip(im).enumerate() {
            if r.len() != cols || c.len() != cols {
                return Err(dim_err(format!("row {i} has inconsistent length")));
            }
        }
        Ok(Self::from_fn(rows, cols, |i, j| C64::new(re[i][j], im[i][j])))
    }

    /// Row-major nested arrays `(re, im)`.
    pub fn to_parts(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let re = (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self[(i, j)].re).collect())
            .collect();
        let im = (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self[(i, j)].im).collect())
            .collect();
        (re, im)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        assert_eq!(self.shape(), other.shape(), "axpy shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b * alpha;
        }
    }

    pub fn fill_zero(&mut self) {
        self.data.fill(ZERO);
    }

    /// Column-major stacking.
    pub fn vec(&self) -> Vec<C64> {
        self.data.clone()
    }

    /// `(A + A*)/2`, exactly Hermitian.
    pub fn hermitian_part(&self) -> Result<Self> {
        if !self.is_square() {
            return Err(dim_err(format!("hermitian part of {}x{} matrix", self.rows, self.cols)));
        }
        let n = self.rows;
        let mut h = Self::zeros(n, n);
        for j in 0..n {
            h[(j, j)] = C64::new(self[(j, j)].re, 0.0);
            for i in (j + 1)..n {
                let v = (self[(i, j)] + self[(j, i)].conj()) * 0.5;
                h[(i, j)] = v;
                h[(j, i)] = v.conj();
            }
        }
        Ok(h)
    }

    /// `‖A − A*‖_F`.
    pub fn hermitian_defect(&self) -> f64 {
        let mut s = 0.0;
        for j in 0..self.cols {
            for i in 0..self.rows {
                s += (self[(i, j)] - self[(j, i)].conj()).norm_sqr();
            }
        }
        s.sqrt()
    }

    /// `‖A*A − I‖_F`.
    pub fn unitarity_defect(&self) -> f64 {
        let mut g = ComplexMatrix::zeros(self.cols, self.cols);
        gemm_adj_left(&mut g, self, self);
        let mut s = 0.0;
        for j in 0..self.cols {
            for i in 0..self.cols {
                let target = if i == j { ONE } else { ZERO };
                s += (g[(i, j)] - target).norm_sqr();
            }
        }
        s.sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub(crate) fn to_nalgebra(&self) -> DMatrix<C64> {
        DMatrix::from_column_slice(self.rows, self.cols, &self.data)
    }

    pub(crate) fn from_nalgebra(m: &DMatrix<C64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.as_slice().to_vec(),
        }
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i + j * self.rows]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i + j * self.rows]
    }
}

/// `out = a * b`.
pub fn gemm(out: &mut ComplexMatrix, a: &ComplexMatrix, b: &ComplexMatrix) {
    assert_eq!(a.cols, b.rows, "matmul inner dimension mismatch");
    assert_eq!(out.shape(), (a.rows, b.cols), "matmul output shape mismatch");
    let (m, kk) = (a.rows, a.cols);
    out.data.fill(ZERO);
    for j in 0..b.cols {
        let oc = &mut out.data[j * m..(j + 1) * m];
        for k in 0..kk {
            let bkj = b.data[k + j * kk];
            let ac = &a.data[k * m..(k + 1) * m];
            for (o, &aik) in oc.iter_mut().zip(ac) {
                *o += aik * bkj;
            }
        }
    }
}

/// `out = a * b*`.
pub fn gemm_adj_right(out: &mut ComplexMatrix, a: &ComplexMatrix, b: &ComplexMatrix) {
    assert_eq!(a.cols, b.cols, "matmul inner dimension mismatch");
    assert_eq!(out.shape(), (a.rows, b.rows), "matmul output shape mismatch");
    let (m, kk, nb) = (a.rows, a.cols, b.rows);
    out.data.fill(ZERO);
    for j in 0..nb {
        let oc = &mut out.data[j * m..(j + 1) * m];
        for k in 0..kk {
            let bjk = b.data[j + k * nb].conj();
            let ac = &a.data[k * m..(k + 1) * m];
            for (o, &aik) in oc.iter_mut().zip(ac) {
                *o += aik * bjk;
            }
        }
    }
}

/// `out = a* * b`.
pub fn gemm_adj_left(out: &mut ComplexMatrix, a: &ComplexMatrix, b: &ComplexMatrix) {
    assert_eq!(a.rows, b.rows, "matmul inner dimension mismatch");
    assert_eq!(out.shape(), (a.cols, b.cols), "matmul output shape mismatch");
    let kk = a.rows;
    for j in 0..b.cols {
        let bc = &b.data[j * kk..(j + 1) * kk];
        for i in 0..a.cols {
            let ac = &a.data[i * kk..(i + 1) * kk];
            let mut s = ZERO;
            for (x, y) in ac.iter().zip(bc) {
                s += x.conj() * y;
            }
            out.data[i + j * a.cols] = s;
        }
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        let mut out = ComplexMatrix::zeros(self.rows, rhs.cols);
        gemm(&mut out, self, rhs);
        out
    }
}

impl Mul<C64> for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: C64) -> ComplexMatrix {
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * rhs).collect(),
        }
    }
}

impl Mul<f64> for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: f64) -> ComplexMatrix {
        self.scale(rhs)
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        let mut out = self.clone();
        out += rhs;
        out
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        let mut out = self.clone();
        out -= rhs;
        out
    }
}

impl Neg for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn neg(self) -> ComplexMatrix {
        self.scale(-1.0)
    }
}

impl AddAssign<&ComplexMatrix> for ComplexMatrix {
    fn add_assign(&mut self, rhs: &ComplexMatrix) {
        assert_eq!(self.shape(), rhs.shape(), "add shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
    }
}

impl SubAssign<&ComplexMatrix> for ComplexMatrix {
    fn sub_assign(&mut self, rhs: &ComplexMatrix) {
        assert_eq!(self.shape(), rhs.shape(), "sub shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a -= b;
        }
    }
}

/// `Re tr(A* B)`, the real Frobenius pairing.
pub fn real_inner(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(dim_err(format!(
            "real_inner of {}x{} and {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    Ok(real_inner_unchecked(a, b))
}

#[inline]
pub(crate) fn real_inner_unchecked(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| x.re * y.re + x.im * y.im)
        .sum()
}

pub fn frobenius_norm(a: &ComplexMatrix) -> f64 {
    a.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `(A − A*)/2`. The result is skew-Hermitian bit-for-bit.
pub fn skew_part(a: &ComplexMatrix) -> Result<ComplexMatrix> {
    if !a.is_square() {
        return Err(dim_err(format!("skew part of {}x{} matrix", a.rows, a.cols)));
    }
    let mut s = ComplexMatrix::zeros(a.rows, a.rows);
    skew_part_into(&mut s, a);
    Ok(s)
}

#[inline]
pub(crate) fn skew_part_into(out: &mut ComplexMatrix, a: &ComplexMatrix) {
    let n = a.rows;
    for j in 0..n {
        out[(j, j)] = C64::new(0.0, a[(j, j)].im);
        for i in (j + 1)..n {
            let v = (a[(i, j)] - a[(j, i)].conj()) * 0.5;
            out[(i, j)] = v;
            out[(j, i)] = -v.conj();
        }
    }
}

/// Column-major stacking of `a`.
pub fn vec(a: &ComplexMatrix) -> Vec<C64> {
    a.vec()
}

/// Inverse of [`vec`].
pub fn unvec(v: &[C64], rows: usize, cols: usize) -> Result<ComplexMatrix> {
    ComplexMatrix::from_col_major(rows, cols, v.to_vec())
}

/// Matrix that passed the unitarity check `‖U*U − I‖_F ≤ tol`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitaryMatrix(ComplexMatrix);

impl UnitaryMatrix {
    pub fn new(m: ComplexMatrix, tol: f64) -> Result<Self> {
        if !m.is_square() {
            return Err(dim_err(format!("unitary must be square, got {}x{}", m.rows, m.cols)));
        }
        if !m.is_finite() {
            return Err(Error::Validation("unitary has non-finite entries".into()));
        }
        let defect = m.unitarity_defect();
        if defect > tol {
            return Err(Error::Validation(format!(
                "‖U*U − I‖_F = {defect:.3e} exceeds {tol:.1e}"
            )));
        }
        Ok(Self(m))
    }

    pub(crate) fn new_unchecked(m: ComplexMatrix) -> Self {
        Self(m)
    }

    pub fn identity(n: usize) -> Self {
        Self(ComplexMatrix::identity(n))
    }

    pub fn into_inner(self) -> ComplexMatrix {
        self.0
    }

    pub fn as_matrix(&self) -> &ComplexMatrix {
        &self.0
    }
}

impl Deref for UnitaryMatrix {
    type Target = ComplexMatrix;
    fn deref(&self) -> &ComplexMatrix {
        &self.0
    }
}

/// Hermitian, positive semidefinite, trace-one matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix(ComplexMatrix);

impl DensityMatrix {
    pub fn new(m: ComplexMatrix, tol: &Tolerances) -> Result<Self> {
        if !m.is_square() {
            return Err(dim_err(format!("state must be square, got {}x{}", m.rows, m.cols)));
        }
        if !m.is_finite() {
            return Err(Error::Validation("state has non-finite entries".into()));
        }
        let norm = frobenius_norm(&m);
        let herm = m.hermitian_defect();
        if herm > tol.herm * norm {
            return Err(Error::Validation(format!(
                "state is not Hermitian: ‖A − A*‖_F = {herm:.3e}"
            )));
        }
        let tr = m.trace();
        if (tr.re - 1.0).abs() > tol.trace || tr.im.abs() > tol.trace {
            return Err(Error::Validation(format!(
                "state trace {:.15} + {:.3e}i is not 1",
                tr.re, tr.im
            )));
        }
        let (eigs, _) = hermitian_eig(&m)?;
        if eigs[0] < -tol.psd {
            return Err(Error::Validation(format!(
                "state is not positive semidefinite: smallest eigenvalue {:.3e}",
                eigs[0]
            )));
        }
        Ok(Self(m))
    }

    pub(crate) fn new_unchecked(m: ComplexMatrix) -> Self {
        Self(m)
    }

    pub fn dim(&self) -> usize {
        self.0.rows
    }

    pub fn into_inner(self) -> ComplexMatrix {
        self.0
    }

    pub fn as_matrix(&self) -> &ComplexMatrix {
        &self.0
    }
}

impl Deref for DensityMatrix {
    type Target = ComplexMatrix;
    fn deref(&self) -> &ComplexMatrix {
        &self.0
    }
}

fn complex_gaussian<R: Rng + ?Sized>(n: usize, rng: &mut R) -> ComplexMatrix {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    ComplexMatrix::from_fn(n, n, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re * s, im * s)
    })
}

/// Haar-distributed unitary: QR of a complex Gaussian matrix with the
/// phases of `diag(R)` folded back into `Q`.
pub fn haar_random_unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> UnitaryMatrix {
    assert!(n >= 1, "dimension must be positive");
    let g = complex_gaussian(n, rng).to_nalgebra();
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        let d = r[(j, j)];
        let norm = d.norm();
        let phase = if norm > 0.0 { d / norm } else { ONE };
        for i in 0..n {
            q[(i, j)] *= phase;
        }
    }
    UnitaryMatrix(ComplexMatrix::from_nalgebra(&q))
}

/// `GG*/tr(GG*)` for complex Gaussian `G`; full rank almost surely.
pub fn random_density<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DensityMatrix {
    assert!(n >= 1, "dimension must be positive");
    let g = complex_gaussian(n, rng);
    let mut gg = ComplexMatrix::zeros(n, n);
    gemm_adj_right(&mut gg, &g, &g);
    let tr = gg.trace().re;
    let rho = gg.scale(1.0 / tr).hermitian_part().expect("square");
    DensityMatrix(rho)
}

/// Unitary polar factor of `a`, the nearest unitary in Frobenius norm.
pub fn re_unitarize(a: &ComplexMatrix) -> Result<UnitaryMatrix> {
    if !a.is_square() {
        return Err(dim_err(format!("polar factor of {}x{} matrix", a.rows, a.cols)));
    }
    if !a.is_finite() {
        return Err(Error::Degenerate("matrix has non-finite entries".into()));
    }
    let svd = a.to_nalgebra().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > smax * 1e-14) || smax == 0.0 {
        return Err(Error::Degenerate(format!(
            "matrix is numerically singular (σ_min = {smin:.3e}, σ_max = {smax:.3e})"
        )));
    }
    let (u, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    Ok(UnitaryMatrix(ComplexMatrix::from_nalgebra(&(u * vt))))
}

/// Eigen-decomposition of a Hermitian matrix; eigenvalues ascending.
pub fn hermitian_eig(a: &ComplexMatrix) -> Result<(Vec<f64>, UnitaryMatrix)> {
    if !a.is_square() {
        return Err(dim_err(format!("eigendecomposition of {}x{} matrix", a.rows, a.cols)));
    }
    let h = a.hermitian_part()?;
    let n = a.rows;
    let eig = nalgebra::SymmetricEigen::new(h.to_nalgebra());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = ComplexMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    Ok((values, UnitaryMatrix(vectors)))
}

/// Applies `f` to the spectrum of a Hermitian matrix.
pub fn hermitian_function(a: &ComplexMatrix, f: impl Fn(f64) -> f64) -> Result<ComplexMatrix> {
    let (vals, vecs) = hermitian_eig(a)?;
    let mapped: Vec<f64> = vals.into_iter().map(f).collect();
    let d = ComplexMatrix::from_real_diagonal(&mapped);
    let vd = vecs.as_matrix() * &d;
    let mut out = ComplexMatrix::zeros(a.rows, a.rows);
    gemm_adj_right(&mut out, &vd, vecs.as_matrix());
    out.hermitian_part()
}
