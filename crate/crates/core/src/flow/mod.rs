//! Integration of the projected gradient flow, event detection and the restart driver.

pub mod events;
pub mod integrator;
pub mod solver;
pub mod trajectory;

pub use events::{detect_zero_crossing, time_tolerance, Crossing, StepWeights, WeightPath};
pub use integrator::{AcceptedStep, Dopri5, StepControl, StepFailure, VectorField};
pub use solver::{
    renormalize_state, run, FlowConfig, FlowIntegrator, FlowRun, InitialGuess, PartialRun, RunError,
    SolverState, StepDiagnostics, StopReason,
};
pub use trajectory::{RestartEvent, Sample, TrajectoryRecord};
