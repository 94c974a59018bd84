//! Eigenvalues of general real matrices.
//!
//! The matrix is reduced to upper Hessenberg form by Householder similarity
//! transforms, then driven to real Schur form with Francis double-shift QR
//! sweeps. Complex conjugate pairs fall out of the trailing 2×2 blocks, so no
//! complex arithmetic is needed. The structure follows the classic EISPACK
//! `orthes`/`hqr` pair.

use num_complex::Complex64;

use super::{DenseMatrix, LinalgError};

/// Largest matrix order handled by the QR path; larger inputs go straight to
/// the Gelfand estimate.
pub const QR_MAX_ORDER: usize = 256;

const MAX_ITERS_PER_EIGENVALUE: usize = 60;
const GELFAND_MAX_SQUARINGS: usize = 64;

/// Default relative tolerance for [`spectral_radius`].
pub const DEFAULT_SPECTRAL_TOL: f64 = 1e-9;

/// In-place Householder reduction to upper Hessenberg form. `h` is n×n row-major.
fn hessenberg(h: &mut [f64], n: usize) {
    if n < 3 {
        return;
    }
    let mut ort = vec![0.0; n];
    let high = n - 1;
    for m in 1..high {
        let scale: f64 = (m..=high).map(|i| h[i * n + m - 1].abs()).sum();
        if scale == 0.0 {
            continue;
        }
        let mut hh = 0.0;
        for i in (m..=high).rev() {
            ort[i] = h[i * n + m - 1] / scale;
            hh += ort[i] * ort[i];
        }
        let mut g = hh.sqrt();
        if ort[m] > 0.0 {
            g = -g;
        }
        hh -= ort[m] * g;
        ort[m] -= g;

        for j in m..n {
            let mut f = 0.0;
            for i in (m..=high).rev() {
                f += ort[i] * h[i * n + j];
            }
            f /= hh;
            for i in m..=high {
                h[i * n + j] -= f * ort[i];
            }
        }
        for i in 0..=high {
            let mut f = 0.0;
            for j in (m..=high).rev() {
                f += ort[j] * h[i * n + j];
            }
            f /= hh;
            for j in m..=high {
                h[i * n + j] -= f * ort[j];
            }
        }
        ort[m] *= scale;
        h[m * n + m - 1] = scale * g;
        for i in (m + 1)..=high {
            h[i * n + m - 1] = 0.0;
        }
    }
}

/// Francis double-shift QR on a Hessenberg matrix. Returns `None` when an
/// eigenvalue fails to deflate within the iteration cap.
fn hessenberg_qr(h: &mut [f64], n: usize) -> Option<Vec<Complex64>> {
    let at = |i: isize, j: isize| (i as usize) * n + (j as usize);
    let eps = f64::EPSILON;
    let mut re = vec![0.0; n];
    let mut im = vec![0.0; n];

    let mut norm = 0.0;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            norm += h[i * n + j].abs();
        }
    }
    if norm == 0.0 {
        return Some(vec![Complex64::new(0.0, 0.0); n]);
    }

    let low: isize = 0;
    let mut nn: isize = n as isize - 1;
    let mut exshift = 0.0;
    let mut iter = 0usize;
    let (mut p, mut q, mut r, mut s, mut z);
    let (mut w, mut x, mut y);

    while nn >= low {
        let mut l = nn;
        while l > low {
            s = h[at(l - 1, l - 1)].abs() + h[at(l, l)].abs();
            if s == 0.0 {
                s = norm;
            }
            if h[at(l, l - 1)].abs() < eps * s {
                break;
            }
            l -= 1;
        }

        if l == nn {
            let idx = at(nn, nn);
            h[idx] += exshift;
            re[nn as usize] = h[idx];
            im[nn as usize] = 0.0;
            nn -= 1;
            iter = 0;
        } else if l == nn - 1 {
            w = h[at(nn, nn - 1)] * h[at(nn - 1, nn)];
            p = (h[at(nn - 1, nn - 1)] - h[at(nn, nn)]) / 2.0;
            q = p * p + w;
            z = q.abs().sqrt();
            h[at(nn, nn)] += exshift;
            h[at(nn - 1, nn - 1)] += exshift;
            x = h[at(nn, nn)];
            let (a, b) = ((nn - 1) as usize, nn as usize);
            if q >= 0.0 {
                z = if p >= 0.0 { p + z } else { p - z };
                re[a] = x + z;
                re[b] = if z != 0.0 { x - w / z } else { re[a] };
                im[a] = 0.0;
                im[b] = 0.0;
            } else {
                re[a] = x + p;
                re[b] = x + p;
                im[a] = z;
                im[b] = -z;
            }
            nn -= 2;
            iter = 0;
        } else {
            x = h[at(nn, nn)];
            y = 0.0;
            w = 0.0;
            if l < nn {
                y = h[at(nn - 1, nn - 1)];
                w = h[at(nn, nn - 1)] * h[at(nn - 1, nn)];
            }
            // exceptional shifts break symmetric stalls
            if iter == 10 {
                exshift += x;
                for i in low..=nn {
                    h[at(i, i)] -= x;
                }
                s = h[at(nn, nn - 1)].abs() + h[at(nn - 1, nn - 2)].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            if iter == 30 {
                s = (y - x) / 2.0;
                s = s * s + w;
                if s > 0.0 {
                    s = s.sqrt();
                    if y < x {
                        s = -s;
                    }
                    s = x - w / ((y - x) / 2.0 + s);
                    for i in low..=nn {
                        h[at(i, i)] -= s;
                    }
                    exshift += s;
                    x = 0.964;
                    y = x;
                    w = x;
                }
            }
            iter += 1;
            if iter > MAX_ITERS_PER_EIGENVALUE {
                return None;
            }

            let mut m = nn - 2;
            loop {
                z = h[at(m, m)];
                r = x - z;
                s = y - z;
                p = (r * s - w) / h[at(m + 1, m)] + h[at(m, m + 1)];
                q = h[at(m + 1, m + 1)] - z - r - s;
                r = h[at(m + 2, m + 1)];
                s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                if h[at(m, m - 1)].abs() * (q.abs() + r.abs())
                    < eps
                        * (p.abs()
                            * (h[at(m - 1, m - 1)].abs() + z.abs() + h[at(m + 1, m + 1)].abs()))
                {
                    break;
                }
                m -= 1;
            }
            for i in (m + 2)..=nn {
                h[at(i, i - 2)] = 0.0;
                if i > m + 2 {
                    h[at(i, i - 3)] = 0.0;
                }
            }

            let mut k = m;
            while k < nn {
                let notlast = k != nn - 1;
                if k != m {
                    p = h[at(k, k - 1)];
                    q = h[at(k + 1, k - 1)];
                    r = if notlast { h[at(k + 2, k - 1)] } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x == 0.0 {
                        k += 1;
                        continue;
                    }
                    p /= x;
                    q /= x;
                    r /= x;
                }
                s = (p * p + q * q + r * r).sqrt();
                if p < 0.0 {
                    s = -s;
                }
                if s != 0.0 {
                    if k != m {
                        h[at(k, k - 1)] = -s * x;
                    } else if l != m {
                        h[at(k, k - 1)] = -h[at(k, k - 1)];
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    z = r / s;
                    q /= p;
                    r /= p;

                    for j in k..=nn {
                        p = h[at(k, j)] + q * h[at(k + 1, j)];
                        if notlast {
                            p += r * h[at(k + 2, j)];
                            h[at(k + 2, j)] -= p * z;
                        }
                        h[at(k, j)] -= p * x;
                        h[at(k + 1, j)] -= p * y;
                    }
                    let imax = nn.min(k + 3);
                    for i in l..=imax {
                        p = x * h[at(i, k)] + y * h[at(i, k + 1)];
                        if notlast {
                            p += z * h[at(i, k + 2)];
                            h[at(i, k + 2)] -= p * r;
                        }
                        h[at(i, k)] -= p;
                        h[at(i, k + 1)] -= p * q;
                    }
                }
                k += 1;
            }
        }
    }

    Some(
        re.into_iter()
            .zip(im)
            .map(|(a, b)| Complex64::new(a, b))
            .collect(),
    )
}

/// All eigenvalues of a square matrix, in no particular order.
pub fn eigenvalues(m: &DenseMatrix) -> Result<Vec<Complex64>, LinalgError> {
    if !m.is_square() {
        return Err(LinalgError::Dimension(format!(
            "eigenvalues need a square matrix, got {:?}",
            m.shape()
        )));
    }
    if !m.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let n = m.rows();
    let mut h = m.as_slice().to_vec();
    hessenberg(&mut h, n);
    hessenberg_qr(&mut h, n).ok_or(LinalgError::NoConvergence {
        best_estimate: f64::NAN,
    })
}

/// Spectral radius ρ(m) = max |λ|.
///
/// Uses the Hessenberg/QR eigenvalue path for matrices up to
/// [`QR_MAX_ORDER`]; falls back to the Gelfand limit `‖M^(2^k)‖^(1/2^k)` when
/// QR stalls or the matrix is larger.
pub fn spectral_radius(m: &DenseMatrix, tol: f64) -> Result<f64, LinalgError> {
    if !m.is_square() {
        return Err(LinalgError::Dimension(format!(
            "spectral radius needs a square matrix, got {:?}",
            m.shape()
        )));
    }
    if !m.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    if m.rows() <= QR_MAX_ORDER {
        if let Ok(eigs) = eigenvalues(m) {
            return Ok(eigs.iter().map(|e| e.norm()).fold(0.0, f64::max));
        }
    }
    gelfand_spectral_radius(m, tol)
}

/// Gelfand-formula estimate by repeated squaring with renormalisation.
pub fn gelfand_spectral_radius(m: &DenseMatrix, tol: f64) -> Result<f64, LinalgError> {
    let norm0 = m.frobenius_norm();
    if norm0 == 0.0 {
        return Ok(0.0);
    }
    let mut b = m.scale(1.0 / norm0);
    let mut log_c = norm0.ln();
    let mut estimate = norm0;
    let mut pow = 1.0f64;
    for _ in 0..GELFAND_MAX_SQUARINGS {
        let sq = b.matmul(&b)?;
        let s = sq.frobenius_norm();
        if s == 0.0 {
            return Ok(0.0);
        }
        b = sq.scale(1.0 / s);
        log_c = 2.0 * log_c + s.ln();
        pow *= 2.0;
        let next = (log_c / pow).exp();
        if (next - estimate).abs() <= tol * next {
            return Ok(next);
        }
        estimate = next;
    }
    Err(LinalgError::NoConvergence {
        best_estimate: estimate,
    })
}

/// Spectral norm ‖m‖₂ (largest singular value).
pub fn operator_norm(m: &DenseMatrix) -> Result<f64, LinalgError> {
    // Normalise first so the Gram matrix neither underflows nor overflows.
    let s = m.max_abs();
    if s == 0.0 || !s.is_finite() {
        return Ok(s);
    }
    let m = &m.scale(1.0 / s);
    let gram = if m.rows() >= m.cols() {
        m.transpose().matmul(m)?
    } else {
        m.matmul(&m.transpose())?
    };
    Ok(s * spectral_radius(&gram, DEFAULT_SPECTRAL_TOL)?.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_examples() {
        let tol = DEFAULT_SPECTRAL_TOL;
        assert!((spectral_radius(&DenseMatrix::identity(3), tol).unwrap() - 1.0).abs() < 1e-14);
        let d = DenseMatrix::from_diag(&[0.5, -0.8]);
        assert!((spectral_radius(&d, tol).unwrap() - 0.8).abs() < 1e-14);
        let rot = DenseMatrix::from_rows(&[&[0.0, -0.7], &[0.7, 0.0]]);
        assert!((spectral_radius(&rot, tol).unwrap() - 0.7).abs() < 1e-14);
    }

    #[test]
    fn operator_norm_of_tiny_and_huge() {
        for scale in [1e-200, 1.0, 1e200] {
            let m = DenseMatrix::from_rows(&[&[3.0 * scale, 0.0], &[0.0, -4.0 * scale]]);
            let n = operator_norm(&m).unwrap();
            assert!((n / (4.0 * scale) - 1.0).abs() < 1e-14, "{scale}: {n}");
        }
        assert_eq!(operator_norm(&DenseMatrix::zeros(2, 3)).unwrap(), 0.0);
    }

    #[test]
    fn non_square_is_dimension_error() {
        let m = DenseMatrix::zeros(2, 3);
        assert!(matches!(
            spectral_radius(&m, 1e-9),
            Err(LinalgError::Dimension(_))
        ));
    }

    #[test]
    fn companion_roots() {
        // x^3 - 6x^2 + 11x - 6 = (x-1)(x-2)(x-3)
        let c = DenseMatrix::from_rows(&[&[6.0, -11.0, 6.0], &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]);
        let mut e: Vec<f64> = eigenvalues(&c).unwrap().iter().map(|z| z.re).collect();
        e.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (got, want) in e.iter().zip([1.0, 2.0, 3.0]) {
            assert!((got - want).abs() < 1e-10);
        }
    }

    #[test]
    fn gelfand_agrees_with_qr() {
        let m = DenseMatrix::from_rows(&[&[0.3, -0.9, 0.1], &[0.8, 0.2, 0.0], &[0.1, 0.4, -0.5]]);
        let qr = spectral_radius(&m, 1e-12).unwrap();
        let g = gelfand_spectral_radius(&m, 1e-12).unwrap();
        assert!((qr - g).abs() < 1e-6 * qr, "{qr} vs {g}");
    }

    #[test]
    fn nilpotent_has_zero_radius() {
        let m = DenseMatrix::from_rows(&[&[0.0, 1.0], &[0.0, 0.0]]);
        assert_eq!(spectral_radius(&m, 1e-9).unwrap(), 0.0);
        assert_eq!(gelfand_spectral_radius(&m, 1e-9).unwrap(), 0.0);
    }

    #[test]
    fn operator_norm_of_diag() {
        let d = DenseMatrix::from_diag(&[0.5, -3.0, 2.0]);
        assert!((operator_norm(&d).unwrap() - 3.0).abs() < 1e-12);
    }
}
