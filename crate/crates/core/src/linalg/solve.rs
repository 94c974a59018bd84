use super::{DenseMatrix, LinalgError};

/// Default relative pivot threshold for [`rank`].
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// LU factorisation with partial pivoting, `P A = L U`, packed in one matrix.
#[derive(Debug, Clone)]
pub struct Lu {
    lu: DenseMatrix,
    perm: Vec<usize>,
}

impl Lu {
    pub fn factor(a: &DenseMatrix) -> Result<Self, LinalgError> {
        if !a.is_square() {
            return Err(LinalgError::Dimension(format!(
                "LU needs a square matrix, got {:?}",
                a.shape()
            )));
        }
        let n = a.rows();
        let scale = a.max_abs();
        if scale == 0.0 {
            return Err(LinalgError::Singular);
        }
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (piv, pval) = (k..n)
                .map(|i| (i, lu[(i, k)].abs()))
                .fold(
                    (k, -1.0),
                    |best, cur| if cur.1 > best.1 { cur } else { best },
                );
            if pval <= f64::EPSILON * scale * n as f64 {
                return Err(LinalgError::Singular);
            }
            if piv != k {
                perm.swap(piv, k);
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(piv, j)];
                    lu[(piv, j)] = tmp;
                }
            }
            let pivot = lu[(k, k)];
            for i in (k + 1)..n {
                let f = lu[(i, k)] / pivot;
                lu[(i, k)] = f;
                if f != 0.0 {
                    for j in (k + 1)..n {
                        lu[(i, j)] -= f * lu[(k, j)];
                    }
                }
            }
        }
        Ok(Self { lu, perm })
    }

    pub fn solve(&self, b: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
        let n = self.lu.rows();
        if b.rows() != n {
            return Err(LinalgError::Dimension(format!(
                "right-hand side has {} rows, expected {n}",
                b.rows()
            )));
        }
        let m = b.cols();
        let mut x = DenseMatrix::from_fn(n, m, |i, j| b[(self.perm[i], j)]);
        for k in 0..n {
            for i in (k + 1)..n {
                let f = self.lu[(i, k)];
                if f != 0.0 {
                    for j in 0..m {
                        x[(i, j)] -= f * x[(k, j)];
                    }
                }
            }
        }
        for k in (0..n).rev() {
            let pivot = self.lu[(k, k)];
            for j in 0..m {
                x[(k, j)] /= pivot;
            }
            for i in 0..k {
                let f = self.lu[(i, k)];
                if f != 0.0 {
                    for j in 0..m {
                        x[(i, j)] -= f * x[(k, j)];
                    }
                }
            }
        }
        Ok(x)
    }
}

/// Solves `a x = b` with one step of iterative refinement.
pub fn solve(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
    let lu = Lu::factor(a)?;
    let mut x = lu.solve(b)?;
    let residual = b.sub(&a.matmul(&x)?)?;
    x.axpy(1.0, &lu.solve(&residual)?)?;
    if !x.is_finite() {
        return Err(LinalgError::Singular);
    }
    Ok(x)
}

pub fn inverse(a: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
    solve(a, &DenseMatrix::identity(a.rows()))
}

/// Computes `(I − a)⁻¹ b`.
pub fn resolvent_apply(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::Dimension(format!(
            "resolvent needs a square matrix, got {:?}",
            a.shape()
        )));
    }
    let i_minus_a = DenseMatrix::identity(a.rows()).sub(a)?;
    solve(&i_minus_a, b)
}

/// Numerical rank by Gaussian elimination with complete pivoting. Pivots
/// below `tol` times the first (largest) pivot count as zero.
pub fn rank(m: &DenseMatrix, tol: f64) -> usize {
    let (rows, cols) = m.shape();
    let mut a = m.clone();
    let mut first_pivot = None;
    let mut r = 0;
    for k in 0..rows.min(cols) {
        let mut best = (k, k, 0.0);
        for i in k..rows {
            for j in k..cols {
                let v = a[(i, j)].abs();
                if v > best.2 {
                    best = (i, j, v);
                }
            }
        }
        let (pi, pj, pv) = best;
        let reference = *first_pivot.get_or_insert(pv);
        if pv == 0.0 || pv <= tol * reference {
            break;
        }
        if pi != k {
            for j in 0..cols {
                let tmp = a[(k, j)];
                a[(k, j)] = a[(pi, j)];
                a[(pi, j)] = tmp;
            }
        }
        if pj != k {
            for i in 0..rows {
                let tmp = a[(i, k)];
                a[(i, k)] = a[(i, pj)];
                a[(i, pj)] = tmp;
            }
        }
        let pivot = a[(k, k)];
        for i in (k + 1)..rows {
            let f = a[(i, k)] / pivot;
            if f != 0.0 {
                for j in k..cols {
                    a[(i, j)] -= f * a[(k, j)];
                }
            }
        }
        r += 1;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolvent_examples() {
        let b = DenseMatrix::from_rows(&[&[1.0, -2.0], &[3.0, 0.5]]);
        let x = resolvent_apply(&DenseMatrix::zeros(2, 2), &b).unwrap();
        assert_eq!(x, b);

        let x = resolvent_apply(
            &DenseMatrix::from_rows(&[&[0.5]]),
            &DenseMatrix::from_rows(&[&[1.0]]),
        )
        .unwrap();
        assert!((x[(0, 0)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn singular_resolvent() {
        let a = DenseMatrix::identity(3);
        assert!(matches!(
            resolvent_apply(&a, &DenseMatrix::identity(3)),
            Err(LinalgError::Singular)
        ));
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank(&DenseMatrix::identity(4), DEFAULT_RANK_TOL), 4);
        let u = [1.0, -2.0, 0.5];
        let v = [3.0, 1.0, 4.0, -1.0];
        let outer = DenseMatrix::from_fn(3, 4, |i, j| u[i] * v[j]);
        assert_eq!(rank(&outer, DEFAULT_RANK_TOL), 1);
        assert_eq!(rank(&DenseMatrix::zeros(3, 3), DEFAULT_RANK_TOL), 0);
    }

    #[test]
    fn inverse_roundtrip() {
        let a = DenseMatrix::from_rows(&[&[4.0, 1.0, 0.0], &[1.0, 3.0, -1.0], &[0.0, 2.0, 5.0]]);
        let inv = inverse(&a).unwrap();
        let prod = a.matmul(&inv).unwrap();
        assert!(prod.sub(&DenseMatrix::identity(3)).unwrap().max_abs() < 1e-14);
    }
}
