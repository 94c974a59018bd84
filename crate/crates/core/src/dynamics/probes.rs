use crate::linalg::{
    eigenvalues, inverse, operator_norm, rank, solve, spectral_radius, Complex64, DenseMatrix,
    LinalgError, Rng, DEFAULT_SPECTRAL_TOL,
};

use super::DynamicsError;

/// Which regime of a linear autonomous map `f(x) = A x + b` to probe.
#[derive(Debug, Clone, PartialEq)]
pub enum RegimeTarget {
    /// `ρ(A) < 1`: fit the decay rate of `‖dx_T/dx_0‖ = ‖A^T‖` over `T ≤ horizon`.
    Contractive { horizon: usize },
    /// `ρ(A) > 1`: perturb `x*` by `radius` in random directions and count
    /// how many runs leave the ball of `escape_radius` within `max_steps`.
    Expansive {
        trials: usize,
        radius: f64,
        escape_radius: f64,
        max_steps: usize,
        seed: u64,
    },
    /// Rescale `A` to `ρ = 1 − 10^{−k}` and track `‖dx*/db‖ = ‖(I − A)^{−1}‖`.
    NearUnit { ks: Vec<u32> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum RegimeReport {
    Decay {
        rho: f64,
        /// Least-squares slope of `ln ‖A^T‖` against `T`.
        fitted_rate: f64,
        /// `|fitted_rate − ln ρ| / |ln ρ|`.
        relative_error: f64,
    },
    Escape {
        rho: f64,
        trials: usize,
        escaped: usize,
        fraction: f64,
    },
    NearUnit {
        /// `(k, ρ_k, ‖dx*/db‖)` per requested `k`.
        points: Vec<(u32, f64, f64)>,
        /// Slope of `log10 ‖dx*/db‖` against `k`.
        growth_slope: f64,
    },
}

fn ls_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

fn i_minus(a: &DenseMatrix) -> DenseMatrix {
    DenseMatrix::identity(a.rows()).sub(a).expect("square")
}

fn fixed_point(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>, DynamicsError> {
    match solve(&i_minus(a), &DenseMatrix::column(b)) {
        Ok(x) => Ok(x.into_vec()),
        Err(LinalgError::Singular) => Err(DynamicsError::Degenerate("I - A is singular".into())),
        Err(e) => Err(e.into()),
    }
}

pub fn autonomous_regime_probe(
    a: &DenseMatrix,
    b: &[f64],
    target: &RegimeTarget,
) -> Result<RegimeReport, DynamicsError> {
    if !a.is_square() || a.rows() != b.len() {
        return Err(DynamicsError::Precondition(
            "A must be n×n and b length n".into(),
        ));
    }
    let x_star = fixed_point(a, b)?;
    let rho = spectral_radius(a, DEFAULT_SPECTRAL_TOL)?;
    match target {
        RegimeTarget::Contractive { horizon } => {
            if rho >= 1.0 || *horizon < 4 {
                return Err(DynamicsError::Precondition(
                    "contractive probe needs rho < 1 and horizon >= 4".into(),
                ));
            }
            // Renormalised power sequence, so tiny ρ^T never underflows.
            let mut v = DenseMatrix::identity(a.rows());
            let mut log_norm = 0.0;
            let mut pts = Vec::new();
            for t in 1..=*horizon {
                v = a.matmul(&v)?;
                let nrm = operator_norm(&v)?;
                if nrm == 0.0 {
                    return Err(DynamicsError::Degenerate("A is nilpotent".into()));
                }
                log_norm += nrm.ln();
                v = v.scale(1.0 / nrm);
                if t > horizon / 4 {
                    pts.push((t as f64, log_norm));
                }
            }
            let fitted_rate = ls_slope(&pts);
            let relative_error = (fitted_rate - rho.ln()).abs() / rho.ln().abs();
            Ok(RegimeReport::Decay {
                rho,
                fitted_rate,
                relative_error,
            })
        }
        RegimeTarget::Expansive {
            trials,
            radius,
            escape_radius,
            max_steps,
            seed,
        } => {
            let n = a.rows();
            let mut rng = Rng::new(*seed);
            let mut escaped = 0;
            for _ in 0..*trials {
                let dir = rng.normal_vec(n, 1.0);
                let dn = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                let mut delta: Vec<f64> = dir.iter().map(|v| v * radius / dn).collect();
                // Deviations from x* evolve linearly: δ' = A δ.
                for _ in 0..*max_steps {
                    delta = a.mul_vec(&delta)?;
                    let dist = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if !(dist <= *escape_radius) {
                        escaped += 1;
                        break;
                    }
                }
            }
            debug_assert_eq!(x_star.len(), n);
            Ok(RegimeReport::Escape {
                rho,
                trials: *trials,
                escaped,
                fraction: escaped as f64 / (*trials).max(1) as f64,
            })
        }
        RegimeTarget::NearUnit { ks } => {
            if rho == 0.0 || ks.len() < 2 {
                return Err(DynamicsError::Precondition(
                    "near-unit probe needs rho > 0 and at least two k".into(),
                ));
            }
            let mut points = Vec::new();
            for &k in ks {
                let rho_k = 1.0 - 10f64.powi(-(k as i32));
                let a_k = a.scale(rho_k / rho);
                let inv = match inverse(&i_minus(&a_k)) {
                    Ok(m) => m,
                    Err(LinalgError::Singular) => {
                        return Err(DynamicsError::Degenerate(format!(
                            "I - A singular at k = {k}"
                        )))
                    }
                    Err(e) => return Err(e.into()),
                };
                // ∂f/∂b = I, so dx*/db is the resolvent itself.
                points.push((k, rho_k, operator_norm(&inv)?));
            }
            let pts: Vec<(f64, f64)> = points
                .iter()
                .map(|&(k, _, s)| (k as f64, s.log10()))
                .collect();
            Ok(RegimeReport::NearUnit {
                points,
                growth_slope: ls_slope(&pts),
            })
        }
    }
}

/// Gaussian `n×n` matrix rescaled to spectral radius `rho`.
pub fn random_contractive_matrix(n: usize, rho: f64, rng: &mut Rng) -> DenseMatrix {
    loop {
        let g = rng.normal_matrix(n, n, 1.0);
        if let Ok(r) = spectral_radius(&g, DEFAULT_SPECTRAL_TOL) {
            if r > 1e-12 {
                return g.scale(rho / r);
            }
        }
    }
}

/// Fraction of sampled fixed-point Jacobians with an eigenvalue within
/// `tol` of 1.
pub fn unit_eigenvalue_probe(
    mut sampler: impl FnMut(&mut Rng) -> DenseMatrix,
    n_samples: usize,
    tol: f64,
    rng: &mut Rng,
) -> Result<f64, DynamicsError> {
    if n_samples == 0 {
        return Ok(0.0);
    }
    let one = Complex64::new(1.0, 0.0);
    let mut hits = 0;
    for _ in 0..n_samples {
        let a = sampler(rng);
        if eigenvalues(&a)?.iter().any(|l| (l - one).norm() <= tol) {
            hits += 1;
        }
    }
    Ok(hits as f64 / n_samples as f64)
}

/// Whether `T ↦ T X` (from `d×d` onto `d×L`) has a surjective derivative,
/// i.e. its `(dL)×(d²)` matrix has rank `dL`.
pub fn transversality_rank_check(x: &DenseMatrix, tol: f64) -> Result<bool, DynamicsError> {
    let (d, len) = x.shape();
    if len > d {
        return Err(DynamicsError::Precondition(format!(
            "need L <= d, got L = {len}, d = {d}"
        )));
    }
    // Rows indexed token-major (c·d + i), columns by row-major T (i·d + k).
    let mut jac = DenseMatrix::zeros(d * len, d * d);
    for c in 0..len {
        for i in 0..d {
            let row = jac.row_mut(c * d + i);
            for k in 0..d {
                row[i * d + k] = x[(k, c)];
            }
        }
    }
    Ok(rank(&jac, tol) == d * len)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halving_decay_rate() {
        let a = DenseMatrix::identity(4).scale(0.5);
        match autonomous_regime_probe(&a, &[1.0; 4], &RegimeTarget::Contractive { horizon: 60 })
            .unwrap()
        {
            RegimeReport::Decay { relative_error, .. } => assert!(relative_error < 1e-12),
            r => panic!("{r:?}"),
        }
    }

    #[test]
    fn singular_model_rejected() {
        let a = DenseMatrix::identity(2);
        assert!(matches!(
            autonomous_regime_probe(&a, &[0.0; 2], &RegimeTarget::Contractive { horizon: 10 }),
            Err(DynamicsError::Degenerate(_))
        ));
    }

    #[test]
    fn transversality_examples() {
        let x = DenseMatrix::from_fn(4, 2, |i, j| (i == j) as u8 as f64);
        assert!(transversality_rank_check(&x, 1e-10).unwrap());
        let dup = DenseMatrix::from_fn(4, 2, |i, _| i as f64 + 1.0);
        assert!(!transversality_rank_check(&dup, 1e-10).unwrap());
        assert!(transversality_rank_check(&DenseMatrix::zeros(2, 3), 1e-10).is_err());
    }
}
