use crate::linalg::{
    operator_norm, resolvent_apply, spectral_radius, DenseMatrix, DEFAULT_SPECTRAL_TOL,
};
use crate::netcore::StateMatrix;

use super::{DynamicsError, LoopMap};

pub const CLASS_MARGIN: f64 = 1e-3;
pub const FP_RESIDUAL_TOL: f64 = 1e-8;
/// Allowed gap between the two spectral-radius computations.
const CONSISTENCY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    Attracting,
    Repelling,
    Marginal,
}

impl Classification {
    pub fn from_rho(rho: f64, margin: f64) -> Self {
        if rho < 1.0 - margin {
            Self::Attracting
        } else if rho > 1.0 + margin {
            Self::Repelling
        } else {
            Self::Marginal
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Attracting => "attracting",
            Self::Repelling => "repelling",
            Self::Marginal => "marginal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifyOptions {
    pub class_margin: f64,
    pub fp_residual_tol: f64,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self {
            class_margin: CLASS_MARGIN,
            fp_residual_tol: FP_RESIDUAL_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointReport {
    pub x_star: StateMatrix,
    pub residual: f64,
    pub rho: f64,
    pub classification: Classification,
    /// Spectral radius of the separately assembled reachability matrix.
    pub m_rho: Option<f64>,
}

/// Spectral radius of `∂f/∂x` at `x_star`, cross-checked against the
/// map's independent reachability matrix when it provides one.
pub fn classify_fixed_point(
    map: &impl LoopMap,
    x_star: &StateMatrix,
    x0: &StateMatrix,
    opts: &ClassifyOptions,
) -> Result<FixedPointReport, DynamicsError> {
    let residual = map.step(x_star, x0)?.distance(x_star);
    if !(residual <= opts.fp_residual_tol) {
        return Err(DynamicsError::NotFixedPoint {
            residual,
            tol: opts.fp_residual_tol,
        });
    }
    let jac = map.jacobians(x_star, x0)?;
    let rho = spectral_radius(&jac.j_state, DEFAULT_SPECTRAL_TOL)?;
    let m_rho = match map.stability_matrix(x_star, x0)? {
        Some(m) => {
            let m_rho = spectral_radius(&m, DEFAULT_SPECTRAL_TOL)?;
            if (m_rho - rho).abs() > CONSISTENCY_TOL * rho.max(1.0) {
                return Err(DynamicsError::Inconsistent { rho, m_rho });
            }
            Some(m_rho)
        }
        None => None,
    };
    Ok(FixedPointReport {
        x_star: x_star.clone(),
        residual,
        rho,
        classification: Classification::from_rho(rho, opts.class_margin),
        m_rho,
    })
}

/// `dx_T/dx_0` by forward propagation `V_t = J_state V_{t−1} + J_input`.
///
/// Recall maps start from `V_0 = 0` (the initial iterate `e` does not depend
/// on `x_0`). Autonomous maps have no other route for the input, so `e`
/// plays the role of the input and `V_0 = I`.
pub fn input_gradient_unrolled(
    map: &impl LoopMap,
    x0: &StateMatrix,
    e: &StateMatrix,
    steps: usize,
) -> Result<DenseMatrix, DynamicsError> {
    if steps == 0 {
        return Err(DynamicsError::Precondition("T must be at least 1".into()));
    }
    let n = e.dim();
    let mut v = if map.has_recall() {
        DenseMatrix::zeros(n, n)
    } else {
        DenseMatrix::identity(n)
    };
    let mut x = e.clone();
    for t in 1..=steps {
        let jac = map.jacobians(&x, x0)?;
        let next_v = jac.j_state.matmul(&v)?.add(&jac.j_input)?;
        let next_x = match map.step(&x, x0) {
            Ok(nx) => nx,
            Err(_) => {
                return Err(DynamicsError::Diverged {
                    step: t,
                    last_finite: v,
                })
            }
        };
        if !next_v.is_finite() {
            return Err(DynamicsError::Diverged {
                step: t,
                last_finite: v,
            });
        }
        v = next_v;
        x = next_x;
    }
    Ok(v)
}

/// `(I − ∂f/∂x)⁻¹ ∂f/∂x_0` at a fixed point with `ρ(∂f/∂x) < 1`.
pub fn input_gradient_limit(
    map: &impl LoopMap,
    x_star: &StateMatrix,
    x0: &StateMatrix,
) -> Result<DenseMatrix, DynamicsError> {
    let jac = map.jacobians(x_star, x0)?;
    let rho = spectral_radius(&jac.j_state, DEFAULT_SPECTRAL_TOL)?;
    if rho >= 1.0 {
        return Err(DynamicsError::Unstable { rho });
    }
    Ok(resolvent_apply(&jac.j_state, &jac.j_input)?)
}

/// `‖J(x_{T−1}) ⋯ J(x_1) · ∂x_1/∂e‖₂` along the trajectory from `e`.
pub fn e_sensitivity(
    map: &impl LoopMap,
    x0: &StateMatrix,
    e: &StateMatrix,
    steps: usize,
) -> Result<f64, DynamicsError> {
    if steps == 0 {
        return Err(DynamicsError::Precondition("T must be at least 1".into()));
    }
    let mut acc = map.jacobians(e, x0)?.j_state;
    let mut x = map.step(e, x0)?;
    for _ in 1..steps {
        acc = map.jacobians(&x, x0)?.j_state.matmul(&acc)?;
        x = map.step(&x, x0)?;
    }
    if !acc.is_finite() {
        return Ok(f64::INFINITY);
    }
    Ok(operator_norm(&acc)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::AffineMap;

    fn s(v: f64) -> StateMatrix {
        StateMatrix::filled(1, 1, v)
    }

    #[test]
    fn scalar_classification() {
        let map = AffineMap::scalar(0.5, Some(0.25));
        let r = classify_fixed_point(&map, &s(0.5), &s(1.0), &ClassifyOptions::default()).unwrap();
        assert!((r.rho - 0.5).abs() < 1e-15);
        assert_eq!(r.classification, Classification::Attracting);
        let rep = classify_fixed_point(
            &AffineMap::scalar(1.5, None),
            &s(0.0),
            &s(0.0),
            &ClassifyOptions::default(),
        )
        .unwrap();
        assert!((rep.rho - 1.5).abs() < 1e-15);
        assert_eq!(rep.classification, Classification::Repelling);
        assert!(matches!(
            classify_fixed_point(&map, &s(0.4), &s(1.0), &ClassifyOptions::default()),
            Err(DynamicsError::NotFixedPoint { .. })
        ));
        assert_eq!(
            Classification::from_rho(1.0005, 1e-3),
            Classification::Marginal
        );
    }

    #[test]
    fn scalar_gradients() {
        let map = AffineMap::scalar(0.5, Some(0.25));
        let v = input_gradient_unrolled(&map, &s(1.0), &s(0.0), 60).unwrap();
        assert!((v[(0, 0)] - 0.5).abs() < 1e-12);
        let lim = input_gradient_limit(&map, &s(0.5), &s(1.0)).unwrap();
        assert!((lim[(0, 0)] - 0.5).abs() < 1e-15);

        let auto = AffineMap::scalar(0.5, None);
        let v = input_gradient_unrolled(&auto, &s(1.0), &s(1.0), 40).unwrap();
        assert!((v[(0, 0)] - 0.5f64.powi(40)).abs() < 1e-25);
        assert_eq!(
            input_gradient_limit(&auto, &s(0.0), &s(0.0)).unwrap()[(0, 0)],
            0.0
        );
        assert!(matches!(
            input_gradient_limit(&AffineMap::scalar(1.5, None), &s(0.0), &s(0.0)),
            Err(DynamicsError::Unstable { .. })
        ));
    }

    #[test]
    fn unrolled_gradient_reports_divergence() {
        let map = AffineMap::scalar(1e200, Some(1.0));
        match input_gradient_unrolled(&map, &s(1.0), &s(1.0), 10) {
            Err(DynamicsError::Diverged { step, last_finite }) => {
                assert!(step >= 2);
                assert!(last_finite.is_finite());
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn scalar_e_sensitivity() {
        let map = AffineMap::scalar(0.5, Some(0.25));
        let one = e_sensitivity(&map, &s(1.0), &s(0.0), 1).unwrap();
        assert_eq!(one, 0.5);
        let thirty = e_sensitivity(&map, &s(1.0), &s(0.0), 30).unwrap();
        assert!((thirty - 0.5f64.powi(29) * 0.5).abs() < 1e-22);
    }
}
