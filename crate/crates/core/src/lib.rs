//! Numerical laboratory for looped (weight-tied) networks: recurrences with
//! and without recall, analytic step Jacobians, fixed-point stability
//! analysis, scalar stability-region geometry and a small progressive-loss
//! trainer for the prefix-sums task.

pub mod dynamics;
pub mod linalg;
pub mod netcore;
pub mod scalarlab;
pub mod trainer;
