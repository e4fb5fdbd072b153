pub mod eval;
pub mod gradcheck;
pub mod replay;
pub mod repro;
pub mod solve;
pub mod synth;
