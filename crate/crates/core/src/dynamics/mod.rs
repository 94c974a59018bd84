//! Iterating looped maps to fixed points, classifying those fixed points,
//! and the gradient, sensitivity and regime probes built on the step
//! Jacobians.

mod probes;
mod stability;
mod trajectory;

use thiserror::Error;

use crate::linalg::{DenseMatrix, LinalgError};
use crate::netcore::{LoopedNet, NetError, StateMatrix, StepJacobians};

pub use probes::{
    autonomous_regime_probe, random_contractive_matrix, transversality_rank_check,
    unit_eigenvalue_probe, RegimeReport, RegimeTarget,
};
pub use stability::{
    classify_fixed_point, e_sensitivity, input_gradient_limit, input_gradient_unrolled,
    Classification, ClassifyOptions, FixedPointReport, CLASS_MARGIN, FP_RESIDUAL_TOL,
};
pub use trajectory::{run_trajectory, Tolerances, Trajectory, TrajectoryStatus};

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("not a fixed point: residual {residual:e} exceeds {tol:e}")]
    NotFixedPoint { residual: f64, tol: f64 },
    #[error("spectral radius {rho} is not below 1")]
    Unstable { rho: f64 },
    #[error("trajectory diverged at step {step}")]
    Diverged {
        step: usize,
        /// Last finite accumulated Jacobian.
        last_finite: DenseMatrix,
    },
    #[error("the two stability computations disagree: {rho} vs {m_rho}")]
    Inconsistent { rho: f64, m_rho: f64 },
    #[error("degenerate model: {0}")]
    Degenerate(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

/// A map `x_{t+1} = f(x_t, x_0)` with analytic Jacobians.
pub trait LoopMap {
    /// Whether `f` reads `x_0` directly.
    fn has_recall(&self) -> bool;

    fn step(&self, x: &StateMatrix, x0: &StateMatrix) -> Result<StateMatrix, DynamicsError>;

    fn jacobians(&self, x: &StateMatrix, x0: &StateMatrix) -> Result<StepJacobians, DynamicsError>;

    /// A second, independently assembled reachability matrix whose spectral
    /// radius must equal that of `∂f/∂x`, where one exists.
    fn stability_matrix(
        &self,
        _x: &StateMatrix,
        _x0: &StateMatrix,
    ) -> Result<Option<DenseMatrix>, DynamicsError> {
        Ok(None)
    }
}

impl LoopMap for LoopedNet {
    fn has_recall(&self) -> bool {
        self.config().recall.has_recall()
    }

    fn step(&self, x: &StateMatrix, x0: &StateMatrix) -> Result<StateMatrix, DynamicsError> {
        Ok(LoopedNet::step(self, x, x0)?)
    }

    fn jacobians(&self, x: &StateMatrix, x0: &StateMatrix) -> Result<StepJacobians, DynamicsError> {
        Ok(self.step_jacobians(x, x0)?)
    }

    fn stability_matrix(
        &self,
        x: &StateMatrix,
        x0: &StateMatrix,
    ) -> Result<Option<DenseMatrix>, DynamicsError> {
        Ok(self.recall_stability_matrix(x, x0)?)
    }
}

/// Affine map `f(x, x0) = A x + B x0 + c` on flattened `d×L` states.
/// Without `B` it is autonomous.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    d: usize,
    len: usize,
    a: DenseMatrix,
    b: Option<DenseMatrix>,
    c: Vec<f64>,
}

impl AffineMap {
    pub fn new(
        d: usize,
        len: usize,
        a: DenseMatrix,
        b: Option<DenseMatrix>,
        c: Vec<f64>,
    ) -> Result<Self, DynamicsError> {
        let n = d * len;
        let bad =
            a.shape() != (n, n) || b.as_ref().is_some_and(|b| b.shape() != (n, n)) || c.len() != n;
        if bad {
            return Err(DynamicsError::Precondition(format!(
                "affine map pieces must be {n}x{n}, {n}x{n} and length {n}"
            )));
        }
        Ok(Self { d, len, a, b, c })
    }

    /// Scalar map `x' = a x + b x0`, `b = None` for autonomous.
    pub fn scalar(a: f64, b: Option<f64>) -> Self {
        let m = |v: f64| DenseMatrix::from_diag(&[v]);
        Self {
            d: 1,
            len: 1,
            a: m(a),
            b: b.map(m),
            c: vec![0.0],
        }
    }

    pub fn a(&self) -> &DenseMatrix {
        &self.a
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.d, self.len)
    }

    fn check(&self, x: &StateMatrix) -> Result<(), DynamicsError> {
        if x.shape() != (self.d, self.len) {
            return Err(DynamicsError::Precondition(format!(
                "state is {:?}, map expects {:?}",
                x.shape(),
                (self.d, self.len)
            )));
        }
        Ok(())
    }
}

impl LoopMap for AffineMap {
    fn has_recall(&self) -> bool {
        self.b.is_some()
    }

    fn step(&self, x: &StateMatrix, x0: &StateMatrix) -> Result<StateMatrix, DynamicsError> {
        self.check(x)?;
        let mut out = self.a.mul_vec(x.as_slice())?;
        if let Some(b) = &self.b {
            self.check(x0)?;
            for (o, v) in out.iter_mut().zip(b.mul_vec(x0.as_slice())?) {
                *o += v;
            }
        }
        for (o, c) in out.iter_mut().zip(&self.c) {
            *o += c;
        }
        let out = StateMatrix::from_flat(self.d, self.len, out)?;
        if !out.is_finite() {
            return Err(NetError::NumericOverflow.into());
        }
        Ok(out)
    }

    fn jacobians(
        &self,
        x: &StateMatrix,
        _x0: &StateMatrix,
    ) -> Result<StepJacobians, DynamicsError> {
        self.check(x)?;
        let n = self.d * self.len;
        Ok(StepJacobians {
            j_state: self.a.clone(),
            j_input: self.b.clone().unwrap_or_else(|| DenseMatrix::zeros(n, n)),
        })
    }
}
