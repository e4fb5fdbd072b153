//! Finite-difference verification of the analytic gradient along tangent directions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::channel::{generate_dataset, random_simplex, MixedUnitaryChannel};
use crate::error::{Error, Result};
use crate::linalg::{haar_random_unitary, skew_part, ComplexMatrix, C64};
use crate::objective::ObjectiveInstance;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradCheckCase {
    pub dim: usize,
    pub rank: usize,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseResult {
    pub case: GradCheckCase,
    pub samples: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckSummary {
    pub step: f64,
    pub cases: Vec<CaseResult>,
    pub max_rel_error: f64,
}

/// The grid `n ∈ {2,3,5}`, `r ∈ {1,2,5}`, `m ∈ {1,3}`.
pub fn default_cases() -> Vec<GradCheckCase> {
    let mut out = Vec::new();
    for dim in [2, 3, 5] {
        for rank in [1, 2, 5] {
            for pairs in [1, 3] {
                out.push(GradCheckCase { dim, rank, pairs });
            }
        }
    }
    out
}

/// A random tangent direction at `(p, U)`: zero-sum `δp` and `ΔU_k = U_k S_k` with `S_k` skew-Hermitian.
pub fn random_tangent<R: Rng + ?Sized>(p: &[f64], us: &[ComplexMatrix], rng: &mut R) -> (Vec<f64>, Vec<ComplexMatrix>) {
    let raw: Vec<f64> = (0..p.len()).map(|_| StandardNormal.sample(rng)).collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    let dp = raw.iter().map(|x| x - mean).collect();
    let du = us
        .iter()
        .map(|u| {
            let n = u.rows();
            let a = ComplexMatrix::from_fn(n, n, |_, _| C64::new(StandardNormal.sample(rng), StandardNormal.sample(rng)));
            u * &skew_part(&a).expect("square")
        })
        .collect();
    (dp, du)
}

/// Central difference of `f` along `(δp, ΔU)`.
pub fn central_difference(
    inst: &ObjectiveInstance,
    p: &[f64],
    us: &[ComplexMatrix],
    dp: &[f64],
    du: &[ComplexMatrix],
    h: f64,
) -> Result<f64> {
    let at = |s: f64| {
        let pp: Vec<f64> = p.iter().zip(dp).map(|(a, b)| a + s * b).collect();
        let uu: Vec<ComplexMatrix> = us.iter().zip(du).map(|(a, b)| a + &b.scale(s)).collect();
        inst.value(&pp, &uu)
    };
    Ok((at(h)? - at(-h)?) / (2.0 * h))
}

/// Runs `samples` random points per case and reports the worst relative error.
pub fn gradcheck(cases: &[GradCheckCase], samples: usize, h: f64, seed: u64) -> Result<GradCheckSummary> {
    if !(h > 0.0) || samples == 0 {
        return Err(Error::InvalidArgument("gradcheck needs h > 0 and at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut results = Vec::with_capacity(cases.len());
    for &case in cases {
        let mut worst: f64 = 0.0;
        for _ in 0..samples {
            let truth = MixedUnitaryChannel::random(case.dim, case.rank, &mut rng);
            let inst = ObjectiveInstance::new(generate_dataset(&truth, case.pairs, &mut rng)?)?;
            let p = random_simplex(case.rank, &mut rng);
            let us: Vec<ComplexMatrix> =
                (0..case.rank).map(|_| haar_random_unitary(case.dim, &mut rng).into_inner()).collect();
            let (dp, du) = random_tangent(&p, &us, &mut rng);
            let analytic = inst.gradient(&p, &us)?.directional(&dp, &du);
            let fd = central_difference(&inst, &p, &us, &dp, &du, h)?;
            let scale = analytic.abs().max(fd.abs());
            let rel = if scale == 0.0 { 0.0 } else { (analytic - fd).abs() / scale };
            worst = worst.max(rel);
        }
        results.push(CaseResult { case, samples, max_rel_error: worst });
    }
    let max_rel_error = results.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckSummary { step: h, cases: results, max_rel_error })
}
