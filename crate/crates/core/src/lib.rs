//! Reconstruction of mixed-unitary quantum channels `Φ(ρ) = Σ p_k U_k ρ U_k*`
//! from input/output state pairs by a projected gradient flow on the product of
//! the probability simplex and the unitary group, with components removed as
//! their weights reach zero.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod error;
pub mod flow;
pub mod gradcheck;
pub mod linalg;
pub mod metrics;
pub mod objective;

pub use channel::{
    depolarizing, fidelity, generate_dataset, ChoiMatrix, Dataset, DatasetHeader, MixedUnitaryChannel, StatePair,
};
pub use error::{Error, Result};
pub use flow::{run, FlowConfig, FlowRun, InitialGuess, RunError, SolverState, StopReason, TrajectoryRecord};
pub use linalg::{ComplexMatrix, DensityMatrix, Tolerances, UnitaryMatrix, C64};
pub use metrics::{audit_trajectory, batch_statistics, choi_distance, BatchSummary, HistogramSpec, RecoveryReport};
pub use objective::{FlowEvaluator, ObjectiveInstance};
