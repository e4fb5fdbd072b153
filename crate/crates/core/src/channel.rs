//! Mixed-unitary channels `Φ(ρ) = Σ_k p_k U_k ρ U_k*`.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{dim_err, Error, Result};
use crate::linalg::{
    gemm, gemm_adj_right, haar_random_unitary, hermitian_eig, hermitian_function,
    random_density, ComplexMatrix, DensityMatrix, Tolerances, UnitaryMatrix, C64,
};

/// Tolerance on `Σ p_k = 1` for a stored channel.
pub const WEIGHT_SUM_TOL: f64 = 1e-10;

/// Convex combination of unitary conjugations.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedUnitaryChannel {
    dim: usize,
    weights: Vec<f64>,
    unitaries: Vec<UnitaryMatrix>,
}

impl MixedUnitaryChannel {
    pub fn new(weights: Vec<f64>, unitaries: Vec<UnitaryMatrix>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Validation("channel needs at least one component".into()));
        }
        if weights.len() != unitaries.len() {
            return Err(Error::Validation(format!(
                "{} weights for {} unitaries",
                weights.len(),
                unitaries.len()
            )));
        }
        let dim = unitaries[0].rows();
        for (k, u) in unitaries.iter().enumerate() {
            if u.shape() != (dim, dim) {
                return Err(dim_err(format!("unitary {k} is {}x{}, expected {dim}x{dim}", u.rows(), u.cols())));
            }
        }
        for (k, &p) in weights.iter().enumerate() {
            if !(p >= 0.0) || !p.is_finite() {
                return Err(Error::Validation(format!("weight {k} = {p} is not a probability")));
            }
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::Validation(format!("weights sum to {sum}, not 1")));
        }
        Ok(Self { dim, weights, unitaries })
    }

    /// Random channel: Haar unitaries, weights uniform on the simplex.
    pub fn random<R: Rng + ?Sized>(dim: usize, rank: usize, rng: &mut R) -> Self {
        assert!(dim >= 1 && rank >= 1);
        let unitaries = (0..rank).map(|_| haar_random_unitary(dim, rng)).collect();
        let weights = random_simplex(rank, rng);
        Self { dim, weights, unitaries }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            weights: vec![1.0],
            unitaries: vec![UnitaryMatrix::identity(dim)],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn unitaries(&self) -> &[UnitaryMatrix] {
        &self.unitaries
    }

    /// `Σ_k p_k U_k ρ U_k*`.
    pub fn apply(&self, rho: &DensityMatrix) -> Result<DensityMatrix> {
        let out = self.apply_matrix(rho)?;
        Ok(DensityMatrix::new_unchecked(out))
    }

    /// Channel action on an arbitrary square matrix.
    pub fn apply_matrix(&self, x: &ComplexMatrix) -> Result<ComplexMatrix> {
        let n = self.dim;
        if x.shape() != (n, n) {
            return Err(dim_err(format!(
                "channel on C^{n}x{n} applied to {}x{} matrix",
                x.rows(),
                x.cols()
            )));
        }
        let mut acc = ComplexMatrix::zeros(n, n);
        let mut ux = ComplexMatrix::zeros(n, n);
        let mut uxu = ComplexMatrix::zeros(n, n);
        for (p, u) in self.weights.iter().zip(&self.unitaries) {
            gemm(&mut ux, u, x);
            gemm_adj_right(&mut uxu, &ux, u);
            acc.axpy(*p, &uxu);
        }
        if x.hermitian_defect() == 0.0 {
            acc = acc.hermitian_part()?;
        }
        Ok(acc)
    }

    /// `Σ_k vec(√p_k U_k) vec(√p_k U_k)*` with column-major `vec`.
    pub fn choi(&self) -> ChoiMatrix {
        let n2 = self.dim * self.dim;
        let mut c = ComplexMatrix::zeros(n2, n2);
        for (p, u) in self.weights.iter().zip(&self.unitaries) {
            let v = u.as_slice();
            for j in 0..n2 {
                let vj = v[j].conj() * *p;
                for i in 0..n2 {
                    c[(i, j)] += v[i] * vj;
                }
            }
        }
        ChoiMatrix(c)
    }

    /// Same channel with components permuted and each unitary multiplied by a phase.
    pub fn relabeled(&self, order: &[usize], phases: &[f64]) -> Result<Self> {
        if order.len() != self.rank() || phases.len() != self.rank() {
            return Err(Error::InvalidArgument("permutation/phase length mismatch".into()));
        }
        let mut seen = vec![false; self.rank()];
        for &k in order {
            if k >= self.rank() || seen[k] {
                return Err(Error::InvalidArgument("not a permutation".into()));
            }
            seen[k] = true;
        }
        let weights = order.iter().map(|&k| self.weights[k]).collect();
        let unitaries = order
            .iter()
            .zip(phases)
            .map(|(&k, &th)| UnitaryMatrix::new_unchecked(self.unitaries[k].as_matrix() * C64::from_polar(1.0, th)))
            .collect();
        Ok(Self { dim: self.dim, weights, unitaries })
    }
}

/// Uniform sample from the probability simplex (Dirichlet(1, …, 1)).
pub fn random_simplex<R: Rng + ?Sized>(r: usize, rng: &mut R) -> Vec<f64> {
    let e: Vec<f64> = (0..r).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Choi matrix of a channel, `n² × n²`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiMatrix(ComplexMatrix);

impl ChoiMatrix {
    pub fn as_matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace().re
    }
}

pub fn pauli_x() -> ComplexMatrix {
    ComplexMatrix::from_parts(&[vec![0.0, 1.0], vec![1.0, 0.0]], &[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap()
}

pub fn pauli_y() -> ComplexMatrix {
    ComplexMatrix::from_parts(&[vec![0.0, 0.0], vec![0.0, 0.0]], &[vec![0.0, -1.0], vec![1.0, 0.0]]).unwrap()
}

pub fn pauli_z() -> ComplexMatrix {
    ComplexMatrix::from_real_diagonal(&[1.0, -1.0])
}

/// Single-qubit depolarizing channel with weights `(1−p, p/3, p/3, p/3)` on `(I, X, Y, Z)`.
pub fn depolarizing(p: f64) -> Result<MixedUnitaryChannel> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("depolarizing probability {p} outside [0, 1]")));
    }
    let q = p / 3.0;
    let unitaries = [ComplexMatrix::identity(2), pauli_x(), pauli_y(), pauli_z()]
        .into_iter()
        .map(UnitaryMatrix::new_unchecked)
        .collect();
    MixedUnitaryChannel::new(vec![1.0 - p, q, q, q], unitaries)
}

/// One observed input/output pair.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePair {
    pub input: DensityMatrix,
    pub output: DensityMatrix,
}

impl StatePair {
    pub fn new(input: DensityMatrix, output: DensityMatrix) -> Result<Self> {
        if input.dim() != output.dim() {
            return Err(dim_err(format!(
                "input is {}-dimensional, output {}-dimensional",
                input.dim(),
                output.dim()
            )));
        }
        Ok(Self { input, output })
    }
}

/// `m` random input states pushed through `channel`.
pub fn generate_dataset<R: Rng + ?Sized>(
    channel: &MixedUnitaryChannel,
    m: usize,
    rng: &mut R,
) -> Result<Vec<StatePair>> {
    if m == 0 {
        return Err(Error::InvalidArgument("dataset needs at least one pair".into()));
    }
    (0..m)
        .map(|_| {
            let rho = random_density(channel.dim(), rng);
            let sigma = channel.apply(&rho)?;
            StatePair::new(rho, sigma)
        })
        .collect()
}

/// Uhlmann fidelity `(tr √(√σ ρ √σ))²`.
pub fn fidelity(sigma: &ComplexMatrix, rho: &ComplexMatrix, tol: &Tolerances) -> Result<f64> {
    if sigma.shape() != rho.shape() || !sigma.is_square() {
        return Err(dim_err("fidelity of states with different dimensions"));
    }
    for (name, m) in [("sigma", sigma), ("rho", rho)] {
        let (eigs, _) = hermitian_eig(m)?;
        if eigs[0] < -tol.psd {
            return Err(Error::Validation(format!(
                "{name} is not positive semidefinite (smallest eigenvalue {:.3e})",
                eigs[0]
            )));
        }
    }
    let sqrt_sigma = hermitian_function(sigma, |x| x.max(0.0).sqrt())?;
    let inner = &(&sqrt_sigma * rho) * &sqrt_sigma;
    let (eigs, _) = hermitian_eig(&inner)?;
    let tr: f64 = eigs.iter().map(|&x| x.max(0.0).sqrt()).sum();
    Ok(tr * tr)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixRecord {
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

impl MatrixRecord {
    pub fn from_matrix(m: &ComplexMatrix) -> Self {
        let (re, im) = m.to_parts();
        Self { re, im }
    }

    pub fn to_matrix(&self) -> Result<ComplexMatrix> {
        ComplexMatrix::from_parts(&self.re, &self.im)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelFile {
    pub dim: usize,
    pub weights: Vec<f64>,
    pub unitaries: Vec<MatrixRecord>,
}

impl ChannelFile {
    pub fn from_channel(c: &MixedUnitaryChannel) -> Self {
        Self {
            dim: c.dim,
            weights: c.weights.clone(),
            unitaries: c.unitaries.iter().map(|u| MatrixRecord::from_matrix(u)).collect(),
        }
    }

    pub fn into_channel(self, tol: &Tolerances) -> Result<MixedUnitaryChannel> {
        let mut unitaries = Vec::with_capacity(self.unitaries.len());
        for (k, rec) in self.unitaries.iter().enumerate() {
            let m = rec
                .to_matrix()
                .map_err(|e| Error::Validation(format!("unitaries[{k}]: {e}")))?;
            if m.shape() != (self.dim, self.dim) {
                return Err(Error::Validation(format!(
                    "unitaries[{k}] is {}x{}, header says dim = {}",
                    m.rows(),
                    m.cols(),
                    self.dim
                )));
            }
            unitaries
                .push(UnitaryMatrix::new(m, tol.unit).map_err(|e| Error::Validation(format!("unitaries[{k}]: {e}")))?);
        }
        MixedUnitaryChannel::new(self.weights, unitaries)
    }
}

pub fn channel_to_json(c: &MixedUnitaryChannel) -> String {
    let mut s = serde_json::to_string_pretty(&ChannelFile::from_channel(c)).expect("serializable");
    s.push('\n');
    s
}

pub fn channel_from_json(text: &str, context: &str, tol: &Tolerances) -> Result<MixedUnitaryChannel> {
    let file: ChannelFile = serde_json::from_str(text).map_err(|e| Error::Parse {
        context: context.to_string(),
        message: format!("line {}, column {}: {e}", e.line(), e.column()),
    })?;
    file.into_channel(tol)
}

pub fn save_channel(c: &MixedUnitaryChannel, path: &Path) -> Result<()> {
    fs::write(path, channel_to_json(c))?;
    Ok(())
}

pub fn load_channel(path: &Path, tol: &Tolerances) -> Result<MixedUnitaryChannel> {
    let text = fs::read_to_string(path)?;
    channel_from_json(&text, &path.display().to_string(), tol)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub dim: usize,
    pub m: usize,
    pub seed: u64,
    /// SHA-256 of the generating channel's JSON, when known.
    pub channel_sha: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairRecord {
    pub rho: MatrixRecord,
    pub sigma: MatrixRecord,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetFile {
    pub header: DatasetHeader,
    pub pairs: Vec<PairRecord>,
}

/// A dataset with its provenance header.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub pairs: Vec<StatePair>,
}

impl Dataset {
    pub fn to_json(&self) -> String {
        let file = DatasetFile {
            header: self.header.clone(),
            pairs: self
                .pairs
                .iter()
                .map(|p| PairRecord {
                    rho: MatrixRecord::from_matrix(&p.input),
                    sigma: MatrixRecord::from_matrix(&p.output),
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("serializable");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str, context: &str, tol: &Tolerances) -> Result<Self> {
        let file: DatasetFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            context: context.to_string(),
            message: format!("line {}, column {}: {e}", e.line(), e.column()),
        })?;
        if file.pairs.len() != file.header.m {
            return Err(Error::Validation(format!(
                "header declares m = {} but file holds {} pairs",
                file.header.m,
                file.pairs.len()
            )));
        }
        if file.pairs.is_empty() {
            return Err(Error::Validation("dataset holds no pairs".into()));
        }
        let mut pairs = Vec::with_capacity(file.pairs.len());
        for (j, rec) in file.pairs.iter().enumerate() {
            let load = |which: &str, r: &MatrixRecord| -> Result<DensityMatrix> {
                let m = r
                    .to_matrix()
                    .map_err(|e| Error::Validation(format!("pairs[{j}].{which}: {e}")))?;
                if m.shape() != (file.header.dim, file.header.dim) {
                    return Err(Error::Validation(format!(
                        "pairs[{j}].{which} is {}x{}, header says dim = {}",
                        m.rows(),
                        m.cols(),
                        file.header.dim
                    )));
                }
                DensityMatrix::new(m, tol).map_err(|e| Error::Validation(format!("pairs[{j}].{which}: {e}")))
            };
            pairs.push(StatePair::new(load("rho", &rec.rho)?, load("sigma", &rec.sigma)?)?);
        }
        Ok(Self { header: file.header, pairs })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path, tol: &Tolerances) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text, &path.display().to_string(), tol)
    }
}
