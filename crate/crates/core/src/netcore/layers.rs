//! Building blocks of the step function. Each block has a forward pass, a
//! dense Jacobian over the flattened state (token-major), and a
//! vector-Jacobian product used by the trainer's reverse pass.

use crate::linalg::DenseMatrix;

use super::params::{GruParams, MixHead, MlpParams};
use super::state::StateMatrix;

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact GELU, `x Φ(x)`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / SQRT_2))
}

pub fn gelu_grad(x: f64) -> f64 {
    gelu_with_grad(x).1
}

/// `(gelu(x), gelu'(x))` sharing one `erf` evaluation.
#[inline]
pub fn gelu_with_grad(x: f64) -> (f64, f64) {
    let cdf = 0.5 * (1.0 + libm::erf(x / SQRT_2));
    (x * cdf, cdf + x * INV_SQRT_2PI * (-0.5 * x * x).exp())
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Row-major operand view: data with its row and column strides.
#[derive(Clone, Copy)]
struct Op<'a> {
    data: &'a [f64],
    rs: isize,
    cs: isize,
}

/// `C += A·B` with `A` m×k, `B` k×n and `C` m×n row-major.
fn gemm_acc(m: usize, k: usize, n: usize, a: Op<'_>, b: Op<'_>, c: &mut [f64]) {
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n, "output too small");
    // SAFETY: strides describe in-bounds views of the slices checked by the callers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn rows(x: &[f64], cols: usize) -> Op<'_> {
    Op {
        data: x,
        rs: cols as isize,
        cs: 1,
    }
}

fn transposed(x: &[f64], cols: usize) -> Op<'_> {
    Op {
        data: x,
        rs: 1,
        cs: cols as isize,
    }
}

/// `out += X Wᵀ` for token rows `X` (`len×cols(W)`), i.e. `W` applied to every token.
pub(crate) fn tokens_wt_acc(w: &DenseMatrix, x: &[f64], out: &mut [f64]) {
    let (r, c) = w.shape();
    let len = x.len() / c;
    assert_eq!(x.len(), len * c);
    assert_eq!(out.len(), len * r);
    gemm_acc(len, c, r, rows(x, c), transposed(w.as_slice(), c), out);
}

/// `out += Y W` for token rows `Y` (`len×rows(W)`), i.e. `Wᵀ` applied to every token.
pub(crate) fn tokens_w_acc(w: &DenseMatrix, y: &[f64], out: &mut [f64]) {
    let (r, c) = w.shape();
    let len = y.len() / r;
    assert_eq!(y.len(), len * r);
    assert_eq!(out.len(), len * c);
    gemm_acc(len, r, c, rows(y, r), rows(w.as_slice(), c), out);
}

/// `G += Yᵀ X`, summing outer products `y_c x_cᵀ` over tokens.
pub(crate) fn outer_sum_acc(g: &mut DenseMatrix, y: &[f64], x: &[f64]) {
    let (r, c) = g.shape();
    let len = y.len() / r;
    assert_eq!(y.len(), len * r);
    assert_eq!(x.len(), len * c);
    gemm_acc(r, len, c, transposed(y, r), rows(x, c), g.as_mut_slice());
}

/// `out += M U` for an `L×L` token-mixing matrix.
fn mix_tokens_acc(m: &DenseMatrix, u: &[f64], d: usize, out: &mut [f64]) {
    let len = m.rows();
    gemm_acc(len, len, d, rows(m.as_slice(), len), rows(u, d), out);
}

/// `out += Mᵀ U`
fn mix_tokens_t_acc(m: &DenseMatrix, u: &[f64], d: usize, out: &mut [f64]) {
    let len = m.rows();
    gemm_acc(len, len, d, transposed(m.as_slice(), len), rows(u, d), out);
}

/// Adds a bias column to every token.
fn add_bias(out: &mut [f64], bias: &DenseMatrix) {
    let b = bias.as_slice();
    for t in out.chunks_exact_mut(b.len()) {
        for (o, v) in t.iter_mut().zip(b) {
            *o += v;
        }
    }
}

/// Sums the token rows of `y` into a bias gradient.
fn bias_grad(g: &mut DenseMatrix, y: &[f64]) {
    let gs = g.as_mut_slice();
    for t in y.chunks_exact(gs.len()) {
        for (o, v) in gs.iter_mut().zip(t) {
            *o += v;
        }
    }
}

/// Dense block-diagonal matrix from equally sized square blocks.
pub fn block_diag(blocks: &[DenseMatrix]) -> DenseMatrix {
    let b = blocks[0].rows();
    let n = b * blocks.len();
    let mut out = DenseMatrix::zeros(n, n);
    for (c, blk) in blocks.iter().enumerate() {
        for i in 0..b {
            for j in 0..b {
                out[(c * b + i, c * b + j)] = blk[(i, j)];
            }
        }
    }
    out
}

/// Applies a `d×d` matrix to every token.
pub fn apply_tokenwise(w: &DenseMatrix, x: &StateMatrix) -> StateMatrix {
    let mut out = StateMatrix::zeros(w.rows(), x.len());
    tokens_wt_acc(w, x.as_slice(), out.as_mut_slice());
    out
}

// ---------------------------------------------------------------- RMSNorm

fn rms(x: &[f64], eps: f64) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64 + eps).sqrt()
}

/// Per token: `y = γ ⊙ x / sqrt(mean(x²) + ε)`.
pub fn rms_norm(x: &StateMatrix, gain: &[f64], eps: f64) -> StateMatrix {
    let mut out = x.clone();
    for c in 0..x.len() {
        let r = rms(x.token(c), eps);
        for (y, g) in out.token_mut(c).iter_mut().zip(gain) {
            *y *= g / r;
        }
    }
    out
}

/// Block `∂y_i/∂x_j = γ_i (δ_ij / r − x_i x_j / (d r³))` per token.
pub fn rms_norm_jacobian(x: &StateMatrix, gain: &[f64], eps: f64) -> DenseMatrix {
    let d = x.d();
    let blocks: Vec<DenseMatrix> = x
        .tokens()
        .map(|t| {
            let r = rms(t, eps);
            let r3 = r * r * r * d as f64;
            DenseMatrix::from_fn(d, d, |i, j| {
                let diag = if i == j { 1.0 / r } else { 0.0 };
                gain[i] * (diag - t[i] * t[j] / r3)
            })
        })
        .collect();
    block_diag(&blocks)
}

/// Returns `x̄` and accumulates `γ̄`.
pub fn rms_norm_vjp(
    x: &StateMatrix,
    gain: &[f64],
    eps: f64,
    ybar: &StateMatrix,
    gain_grad: &mut [f64],
) -> StateMatrix {
    let d = x.d() as f64;
    let mut xbar = StateMatrix::zeros(x.d(), x.len());
    for c in 0..x.len() {
        let t = x.token(c);
        let yb = ybar.token(c);
        let r = rms(t, eps);
        let mut dot = 0.0;
        for i in 0..t.len() {
            gain_grad[i] += yb[i] * t[i] / r;
            dot += gain[i] * yb[i] * t[i];
        }
        let k = dot / (d * r * r * r);
        for (i, xb) in xbar.token_mut(c).iter_mut().enumerate() {
            *xb = gain[i] * yb[i] / r - t[i] * k;
        }
    }
    xbar
}

// ------------------------------------------------------------ token mixing

/// `h(u)_c = Σ_heads P Σ_j M[c, j] u_j`.
pub fn mix_forward(heads: &[MixHead], banded: bool, u: &StateMatrix) -> StateMatrix {
    let (d, len) = u.shape();
    let mut out = StateMatrix::zeros(d, len);
    let mut v = vec![0.0; d * len];
    for h in heads {
        let m = mix_weights(h, banded, len);
        v.fill(0.0);
        mix_tokens_acc(&m, u.as_slice(), d, &mut v);
        tokens_wt_acc(&h.proj, &v, out.as_mut_slice());
    }
    out
}

/// Materialised `L×L` mixing matrix of one head.
pub fn mix_weights(h: &MixHead, banded: bool, len: usize) -> DenseMatrix {
    if banded {
        banded_matrix(h.weights.as_slice(), len)
    } else {
        h.weights.clone()
    }
}

/// Shift-invariant banded matrix from a kernel over offsets `-b..=b`.
pub fn banded_matrix(kernel: &[f64], len: usize) -> DenseMatrix {
    let b = (kernel.len() / 2) as isize;
    DenseMatrix::from_fn(len, len, |c, j| {
        let off = j as isize - c as isize;
        if off.abs() <= b {
            kernel[(off + b) as usize]
        } else {
            0.0
        }
    })
}

/// `Σ_heads M ⊗ P`
pub fn mix_jacobian(heads: &[MixHead], banded: bool, d: usize, len: usize) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(d * len, d * len);
    for h in heads {
        let m = mix_weights(h, banded, len);
        out.axpy(1.0, &m.kron(&h.proj)).expect("shapes agree");
    }
    out
}

/// Returns `ū` and accumulates head gradients into `grads`.
pub fn mix_vjp(
    heads: &[MixHead],
    banded: bool,
    u: &StateMatrix,
    obar: &StateMatrix,
    grads: &mut [MixHead],
) -> StateMatrix {
    let (d, len) = u.shape();
    let mut ubar = StateMatrix::zeros(d, len);
    let mut v = vec![0.0; d * len];
    let mut vbar = vec![0.0; d * len];
    for (h, g) in heads.iter().zip(grads.iter_mut()) {
        let m = mix_weights(h, banded, len);
        v.fill(0.0);
        mix_tokens_acc(&m, u.as_slice(), d, &mut v);
        outer_sum_acc(&mut g.proj, obar.as_slice(), &v);
        vbar.fill(0.0);
        tokens_w_acc(&h.proj, obar.as_slice(), &mut vbar);
        mix_tokens_t_acc(&m, &vbar, d, ubar.as_mut_slice());
        // M̄ = V̄ Uᵀ, folded onto the kernel diagonals when banded.
        let mut mbar = DenseMatrix::zeros(len, len);
        gemm_acc(
            len,
            d,
            len,
            rows(&vbar, d),
            transposed(u.as_slice(), d),
            mbar.as_mut_slice(),
        );
        if banded {
            let b = (h.weights.cols() / 2) as isize;
            let kg = g.weights.as_mut_slice();
            for c in 0..len {
                for j in 0..len {
                    let off = j as isize - c as isize;
                    if off.abs() <= b {
                        kg[(off + b) as usize] += mbar[(c, j)];
                    }
                }
            }
        } else {
            g.weights.axpy(1.0, &mbar).expect("shapes agree");
        }
    }
    ubar
}

// -------------------------------------------------------------------- MLP

/// Returns the output and the hidden pre-activations (`hidden × L`, token-major).
pub fn mlp_forward(p: &MlpParams, u: &StateMatrix) -> (StateMatrix, Vec<f64>) {
    let hidden = p.w1.rows();
    let (d, len) = u.shape();
    let mut pre = vec![0.0; hidden * len];
    add_bias(&mut pre, &p.b1);
    tokens_wt_acc(&p.w1, u.as_slice(), &mut pre);
    let act: Vec<f64> = pre.iter().map(|&x| gelu(x)).collect();
    let mut out = StateMatrix::zeros(d, len);
    add_bias(out.as_mut_slice(), &p.b2);
    tokens_wt_acc(&p.w2, &act, out.as_mut_slice());
    (out, pre)
}

/// Block `W2 diag(gelu'(a_c)) W1` per token.
pub fn mlp_jacobian(p: &MlpParams, pre: &[f64], d: usize, len: usize) -> DenseMatrix {
    let hidden = p.w1.rows();
    let blocks: Vec<DenseMatrix> = (0..len)
        .map(|c| {
            let a = &pre[c * hidden..(c + 1) * hidden];
            let scaled = DenseMatrix::from_fn(hidden, d, |k, j| gelu_grad(a[k]) * p.w1[(k, j)]);
            p.w2.matmul(&scaled).expect("shapes agree")
        })
        .collect();
    block_diag(&blocks)
}

pub fn mlp_vjp(
    p: &MlpParams,
    u: &StateMatrix,
    pre: &[f64],
    obar: &StateMatrix,
    grads: &mut MlpParams,
) -> StateMatrix {
    let (d, len) = u.shape();
    let (act, dact): (Vec<f64>, Vec<f64>) = pre.iter().map(|&x| gelu_with_grad(x)).unzip();
    outer_sum_acc(&mut grads.w2, obar.as_slice(), &act);
    bias_grad(&mut grads.b2, obar.as_slice());
    let mut abar = vec![0.0; pre.len()];
    tokens_w_acc(&p.w2, obar.as_slice(), &mut abar);
    for (ab, dy) in abar.iter_mut().zip(&dact) {
        *ab *= dy;
    }
    outer_sum_acc(&mut grads.w1, &abar, u.as_slice());
    bias_grad(&mut grads.b1, &abar);
    let mut ubar = StateMatrix::zeros(d, len);
    tokens_w_acc(&p.w1, &abar, ubar.as_mut_slice());
    ubar
}

// -------------------------------------------------------------------- GRU

/// Gate activations saved by the forward pass.
#[derive(Debug, Clone)]
pub struct GruCache {
    pub r: Vec<f64>,
    pub z: Vec<f64>,
    pub n: Vec<f64>,
    /// `U_n s`
    pub m: Vec<f64>,
}

/// Per token, with hidden `s` and input `u`:
/// `r = σ(W_r u + U_r s + b_r)`, `z = σ(W_z u + U_z s + b_z)`,
/// `n = tanh(W_n u + r ⊙ U_n s + b_n)`, `out = (1 − z) ⊙ n + z ⊙ s`.
pub fn gru_forward(p: &GruParams, s: &StateMatrix, u: &StateMatrix) -> (StateMatrix, GruCache) {
    let (d, len) = s.shape();
    let (sv, uv) = (s.as_slice(), u.as_slice());
    let gate = |w: &DenseMatrix, us: &DenseMatrix, b: &DenseMatrix| {
        let mut g = vec![0.0; d * len];
        add_bias(&mut g, b);
        tokens_wt_acc(w, uv, &mut g);
        tokens_wt_acc(us, sv, &mut g);
        g.iter_mut().for_each(|v| *v = sigmoid(*v));
        g
    };
    let r = gate(&p.w_r, &p.u_r, &p.b_r);
    let z = gate(&p.w_z, &p.u_z, &p.b_z);
    let mut m = vec![0.0; d * len];
    tokens_wt_acc(&p.u_n, sv, &mut m);
    let mut n = vec![0.0; d * len];
    add_bias(&mut n, &p.b_n);
    tokens_wt_acc(&p.w_n, uv, &mut n);
    for i in 0..n.len() {
        n[i] = (n[i] + r[i] * m[i]).tanh();
    }
    let out: Vec<f64> = (0..n.len())
        .map(|i| (1.0 - z[i]) * n[i] + z[i] * sv[i])
        .collect();
    let out = StateMatrix::from_flat(d, len, out).expect("shape");
    (out, GruCache { r, z, n, m })
}

/// Dense `(∂out/∂s, ∂out/∂u)`.
pub fn gru_jacobians(
    p: &GruParams,
    s: &StateMatrix,
    cache: &GruCache,
) -> (DenseMatrix, DenseMatrix) {
    let (d, len) = s.shape();
    let mut js = Vec::with_capacity(len);
    let mut ju = Vec::with_capacity(len);
    for c in 0..len {
        let off = c * d;
        let st = s.token(c);
        let (r, z, n, m) = (
            &cache.r[off..off + d],
            &cache.z[off..off + d],
            &cache.n[off..off + d],
            &cache.m[off..off + d],
        );
        js.push(DenseMatrix::from_fn(d, d, |i, j| {
            let dn = 1.0 - n[i] * n[i];
            let dr = r[i] * (1.0 - r[i]);
            let dz = z[i] * (1.0 - z[i]);
            let cand = dn * (m[i] * dr * p.u_r[(i, j)] + r[i] * p.u_n[(i, j)]);
            let ident = if i == j { z[i] } else { 0.0 };
            (1.0 - z[i]) * cand + (st[i] - n[i]) * dz * p.u_z[(i, j)] + ident
        }));
        ju.push(DenseMatrix::from_fn(d, d, |i, j| {
            let dn = 1.0 - n[i] * n[i];
            let dr = r[i] * (1.0 - r[i]);
            let dz = z[i] * (1.0 - z[i]);
            (1.0 - z[i]) * dn * (p.w_n[(i, j)] + m[i] * dr * p.w_r[(i, j)])
                + (st[i] - n[i]) * dz * p.w_z[(i, j)]
        }));
    }
    (block_diag(&js), block_diag(&ju))
}

/// Returns `(s̄, ū)` and accumulates gate gradients.
pub fn gru_vjp(
    p: &GruParams,
    s: &StateMatrix,
    u: &StateMatrix,
    cache: &GruCache,
    obar: &StateMatrix,
    grads: &mut GruParams,
) -> (StateMatrix, StateMatrix) {
    let (d, len) = s.shape();
    let (sv, uv, ob) = (s.as_slice(), u.as_slice(), obar.as_slice());
    let GruCache { r, z, n, m } = cache;
    let size = d * len;
    let mut sbar = vec![0.0; size];
    let mut an = vec![0.0; size];
    let mut az = vec![0.0; size];
    let mut ar = vec![0.0; size];
    let mut mbar = vec![0.0; size];
    for i in 0..size {
        let nbar = ob[i] * (1.0 - z[i]);
        let zbar = ob[i] * (sv[i] - n[i]);
        sbar[i] = ob[i] * z[i];
        an[i] = nbar * (1.0 - n[i] * n[i]);
        az[i] = zbar * z[i] * (1.0 - z[i]);
        mbar[i] = an[i] * r[i];
        ar[i] = an[i] * m[i] * r[i] * (1.0 - r[i]);
    }
    outer_sum_acc(&mut grads.w_n, &an, uv);
    outer_sum_acc(&mut grads.u_n, &mbar, sv);
    outer_sum_acc(&mut grads.w_z, &az, uv);
    outer_sum_acc(&mut grads.u_z, &az, sv);
    outer_sum_acc(&mut grads.w_r, &ar, uv);
    outer_sum_acc(&mut grads.u_r, &ar, sv);
    bias_grad(&mut grads.b_n, &an);
    bias_grad(&mut grads.b_z, &az);
    bias_grad(&mut grads.b_r, &ar);
    tokens_w_acc(&p.u_n, &mbar, &mut sbar);
    tokens_w_acc(&p.u_z, &az, &mut sbar);
    tokens_w_acc(&p.u_r, &ar, &mut sbar);
    let mut ubar = vec![0.0; size];
    tokens_w_acc(&p.w_n, &an, &mut ubar);
    tokens_w_acc(&p.w_z, &az, &mut ubar);
    tokens_w_acc(&p.w_r, &ar, &mut ubar);
    (
        StateMatrix::from_flat(d, len, sbar).expect("shape"),
        StateMatrix::from_flat(d, len, ubar).expect("shape"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_values() {
        assert_eq!(gelu(0.0), 0.0);
        // Φ(1) = 0.841344746...
        assert!((gelu(1.0) - 0.841_344_746_068_542_9).abs() < 1e-12);
        let h = 1e-6;
        for x in [-2.0, -0.3, 0.0, 0.7, 3.0] {
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn rms_norm_examples() {
        let zero = StateMatrix::zeros(3, 2);
        assert_eq!(rms_norm(&zero, &[1.0; 3], 1e-6), zero);
        let x = StateMatrix::from_flat(2, 1, vec![3.0, 4.0]).unwrap();
        assert_eq!(rms_norm(&x, &[0.0, 0.0], 1e-6).as_slice(), &[0.0, 0.0]);
        let y = rms_norm(&x, &[1.0, 1.0], 1e-12);
        // mean square 12.5 → 3/√12.5, 4/√12.5
        assert!((y.as_slice()[0] - 0.84853).abs() < 1e-4);
        assert!((y.as_slice()[1] - 1.13137).abs() < 1e-4);
    }

    #[test]
    fn banded_matrix_layout() {
        let m = banded_matrix(&[1.0, 2.0, 3.0], 4);
        assert_eq!(m.row(0), &[2.0, 3.0, 0.0, 0.0]);
        assert_eq!(m.row(2), &[0.0, 1.0, 2.0, 3.0]);
    }
}
