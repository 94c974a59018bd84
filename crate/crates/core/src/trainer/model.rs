use crate::linalg::Rng;
use crate::netcore::{InitScales, IoHead, LoopedNet, NetConfig, NetError, NetParams, StateMatrix};

use super::data::PrefixSumExample;
use super::TrainError;

/// A looped net with its bit embedding and per-token two-logit readout.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub net: LoopedNet,
    pub head: IoHead,
}

/// Gradients with the same layout as [`Model`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub net: NetParams,
    pub head: IoHead,
}

fn norm_sq(t: &[&crate::linalg::DenseMatrix]) -> f64 {
    t.iter().flat_map(|m| m.as_slice()).map(|v| v * v).sum()
}

impl Gradients {
    pub fn global_norm(&self) -> f64 {
        (norm_sq(&self.net.tensors()) + norm_sq(&self.head.tensors())).sqrt()
    }

    pub fn scale(&mut self, c: f64) {
        for t in self
            .net
            .tensors_mut()
            .into_iter()
            .chain(self.head.tensors_mut())
        {
            t.as_mut_slice().iter_mut().for_each(|v| *v *= c);
        }
    }

    /// Rescales to norm `max_norm` when larger; returns the norm before clipping.
    pub fn clip(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.net
            .tensors()
            .into_iter()
            .chain(self.head.tensors())
            .flat_map(|t| t.as_slice().iter().copied())
            .collect()
    }
}

/// Loss split into the per-iterate means that make it up.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    /// Mean cross-entropy at each supervised iterate `N+1..=N+K`.
    pub per_iterate: Vec<f64>,
}

impl Model {
    pub fn new(net: LoopedNet, head: IoHead) -> Result<Self, TrainError> {
        let d = net.config().d;
        if head.embed.shape() != (2, d)
            || head.readout_w.shape() != (2, d)
            || head.readout_b.shape() != (2, 1)
        {
            return Err(TrainError::Config(format!(
                "head must embed 2 symbols into d = {d} and read out 2 logits"
            )));
        }
        Ok(Self { net, head })
    }

    pub fn random(cfg: NetConfig, rng: &mut Rng) -> Result<Self, TrainError> {
        let d = cfg.d;
        let net = LoopedNet::random_scaled(cfg, rng, InitScales::default())?;
        let head = IoHead::init(d, 2, 2, rng);
        Self::new(net, head)
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients {
            net: self.net.params().zeros_like(),
            head: self.head.zeros_like(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.net.params().num_params()
            + self
                .head
                .tensors()
                .iter()
                .map(|t| t.as_slice().len())
                .sum::<usize>()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.net.params().to_flat();
        v.extend(
            self.head
                .tensors()
                .into_iter()
                .flat_map(|t| t.as_slice().iter().copied()),
        );
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let n = self.net.params().num_params();
        self.net.params_mut().set_flat(&flat[..n]);
        let mut off = n;
        for t in self.head.tensors_mut() {
            let s = t.as_mut_slice();
            s.copy_from_slice(&flat[off..off + s.len()]);
            off += s.len();
        }
    }

    /// Embedded input `x_0`, one token per bit.
    pub fn embed(&self, bits: &[u8]) -> StateMatrix {
        let d = self.net.config().d;
        let mut x0 = StateMatrix::zeros(d, bits.len());
        for (c, &b) in bits.iter().enumerate() {
            x0.token_mut(c)
                .copy_from_slice(self.head.embed.row(b as usize));
        }
        x0
    }

    /// The loop's starting iterate `e`: zeros with recall, the embedded
    /// input without (where `x_0` is otherwise never seen).
    pub fn initial_iterate(&self, x0: &StateMatrix) -> StateMatrix {
        if self.net.config().recall.has_recall() {
            StateMatrix::zeros(x0.d(), x0.len())
        } else {
            x0.clone()
        }
    }

    /// Two logits for token `c` of state `x`.
    fn logits(&self, x: &StateMatrix, c: usize) -> [f64; 2] {
        let t = x.token(c);
        let w = &self.head.readout_w;
        let b = self.head.readout_b.as_slice();
        let dot = |r: usize| w.row(r).iter().zip(t).map(|(a, b)| a * b).sum::<f64>();
        [dot(0) + b[0], dot(1) + b[1]]
    }

    /// Predicted bit of every token.
    pub fn readout_bits(&self, x: &StateMatrix) -> Vec<u8> {
        (0..x.len())
            .map(|c| {
                let l = self.logits(x, c);
                u8::from(l[1] > l[0])
            })
            .collect()
    }

    /// Runs the loop `iters` times and reads out the final state.
    pub fn predict(&self, bits: &[u8], iters: usize) -> Result<Vec<u8>, NetError> {
        let x0 = self.embed(bits);
        let mut x = self.initial_iterate(&x0);
        for _ in 0..iters {
            x = self.net.step(&x, &x0)?;
        }
        Ok(self.readout_bits(&x))
    }
}

/// Softmax cross-entropy of two logits and `∂/∂logits`.
fn cross_entropy(l: [f64; 2], target: u8) -> (f64, [f64; 2]) {
    let m = l[0].max(l[1]);
    let z = (l[0] - m).exp() + (l[1] - m).exp();
    let lse = m + z.ln();
    let p = [(l[0] - lse).exp(), (l[1] - lse).exp()];
    let t = target as usize;
    let mut g = p;
    g[t] -= 1.0;
    (lse - l[t], g)
}

/// Progressive-loss objective on one batch: `n` gradient-free iterations,
/// then `k` differentiated ones, with the cross-entropy averaged over the
/// `k` supervised iterates, every token and every example.
pub fn forward_backward(
    model: &Model,
    batch: &[PrefixSumExample],
    n: usize,
    k: usize,
) -> Result<(f64, Gradients), TrainError> {
    let mut grads = model.zero_grads();
    let report = run_batch(model, batch, n, k, Some(&mut grads))?;
    Ok((report.loss, grads))
}

/// The same objective without gradients.
pub fn batch_loss(
    model: &Model,
    batch: &[PrefixSumExample],
    n: usize,
    k: usize,
) -> Result<LossReport, TrainError> {
    run_batch(model, batch, n, k, None)
}

fn run_batch(
    model: &Model,
    batch: &[PrefixSumExample],
    n: usize,
    k: usize,
    mut grads: Option<&mut Gradients>,
) -> Result<LossReport, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::Precondition("batch is empty".into()));
    }
    if k == 0 {
        return Err(TrainError::Precondition(
            "need at least one supervised iterate".into(),
        ));
    }
    let tokens: usize = batch.iter().map(|e| e.len()).sum();
    let scale = 1.0 / (tokens * k) as f64;
    let mut per_iterate = vec![0.0; k];
    let overflow = |iterate: usize| {
        move |e: NetError| match e {
            NetError::NumericOverflow => TrainError::NonFinite { iterate },
            other => TrainError::Net(other),
        }
    };
    for ex in batch {
        let x0 = model.embed(&ex.input_bits);
        let mut x = model.initial_iterate(&x0);
        for t in 0..n {
            x = model.net.step(&x, &x0).map_err(overflow(t + 1))?;
        }
        let mut traces = Vec::with_capacity(k);
        // ∂loss/∂logits per supervised iterate and token.
        let mut dlogits: Vec<Vec<[f64; 2]>> = Vec::with_capacity(k);
        for (s, acc) in per_iterate.iter_mut().enumerate() {
            let iterate = n + s + 1;
            let trace = if grads.is_some() {
                let tr = model.net.step_traced(&x, &x0).map_err(overflow(iterate))?;
                x = tr.output().clone();
                Some(tr)
            } else {
                x = model.net.step(&x, &x0).map_err(overflow(iterate))?;
                None
            };
            let mut dl = Vec::with_capacity(x.len());
            for (c, &target) in ex.target_bits.iter().enumerate() {
                let (ce, g) = cross_entropy(model.logits(&x, c), target);
                if !ce.is_finite() {
                    return Err(TrainError::NonFinite { iterate });
                }
                *acc += ce;
                dl.push([g[0] * scale, g[1] * scale]);
            }
            traces.extend(trace);
            dlogits.push(dl);
        }
        let Some(g) = grads.as_deref_mut() else {
            continue;
        };
        let d = x.d();
        let mut xbar = StateMatrix::zeros(d, x.len());
        for (tr, dl) in traces.iter().zip(&dlogits).rev() {
            let out = tr.output();
            let wd = &model.head.readout_w;
            for (c, gl) in dl.iter().enumerate() {
                let xt = out.token(c);
                let xb = xbar.token_mut(c);
                for (r, &gr) in gl.iter().enumerate() {
                    g.head.readout_b.as_mut_slice()[r] += gr;
                    for ((gw, w), (&xv, b)) in g
                        .head
                        .readout_w
                        .row_mut(r)
                        .iter_mut()
                        .zip(wd.row(r))
                        .zip(xt.iter().zip(xb.iter_mut()))
                    {
                        *gw += gr * xv;
                        *b += gr * w;
                    }
                }
            }
            let (prev, x0bar) = model.net.backward_step(tr, &xbar, &mut g.net);
            add_embed_grad(&mut g.head, &ex.input_bits, &x0bar);
            xbar = prev;
        }
        // Without recall the first iterate is the embedding itself.
        if n == 0 && !model.net.config().recall.has_recall() {
            add_embed_grad(&mut g.head, &ex.input_bits, &xbar);
        }
    }
    let per_iterate: Vec<f64> = per_iterate.iter().map(|v| v / tokens as f64).collect();
    let loss = per_iterate.iter().sum::<f64>() / k as f64;
    if !loss.is_finite() {
        return Err(TrainError::NonFinite { iterate: n + k });
    }
    Ok(LossReport { loss, per_iterate })
}

fn add_embed_grad(head: &mut IoHead, bits: &[u8], xbar: &StateMatrix) {
    for (c, &b) in bits.iter().enumerate() {
        for (g, v) in head.embed.row_mut(b as usize).iter_mut().zip(xbar.token(c)) {
            *g += v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_values() {
        let (l, g) = cross_entropy([0.0, 0.0], 1);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(g, [0.5, -0.5]);
        let (l, _) = cross_entropy([800.0, -800.0], 0);
        assert!(l.abs() < 1e-300);
    }
}
