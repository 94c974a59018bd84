use crate::linalg::{DenseMatrix, Rng};

use super::config::{MixBandwidth, NetConfig, NormMode};

/// Linear recall `g(x, x0) = W_x x + W_0 x0`, applied per token.
#[derive(Debug, Clone, PartialEq)]
pub struct RecallParams {
    pub w_x: DenseMatrix,
    pub w_0: DenseMatrix,
}

/// One head of the token-mixing sublayer: `h(u)_c = P Σ_j M[c, j] u_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixHead {
    /// `1×(2b+1)` offset kernel when banded, `L×L` when full.
    pub weights: DenseMatrix,
    /// `d×d` channel projection `P`.
    pub proj: DenseMatrix,
}

/// Token-wise GELU MLP `h(u)_c = W2 gelu(W1 u_c + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub w1: DenseMatrix,
    pub b1: DenseMatrix,
    pub w2: DenseMatrix,
    pub b2: DenseMatrix,
}

/// GRU cell replacing a residual add: hidden state is the residual stream,
/// input is the sublayer output.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_z: DenseMatrix,
    pub u_z: DenseMatrix,
    pub b_z: DenseMatrix,
    pub w_r: DenseMatrix,
    pub u_r: DenseMatrix,
    pub b_r: DenseMatrix,
    pub w_n: DenseMatrix,
    pub u_n: DenseMatrix,
    pub b_n: DenseMatrix,
}

/// Normalisation parameters of one residual site.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteParams {
    pub norm_in: Option<DenseMatrix>,
    pub norm_out: Option<DenseMatrix>,
    pub gru: Option<GruParams>,
}

/// All trainable parameters of a looped network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub recall: Option<RecallParams>,
    pub mix: Vec<MixHead>,
    pub mlp: MlpParams,
    /// Site 0 wraps the token-mixing sublayer, site 1 the MLP.
    pub sites: [SiteParams; 2],
}

/// Token embedding and per-token two-way readout used by the trainer.
#[derive(Debug, Clone, PartialEq)]
pub struct IoHead {
    /// `vocab×d`; row `v` embeds symbol `v`.
    pub embed: DenseMatrix,
    /// `classes×d`
    pub readout_w: DenseMatrix,
    /// `classes×1`
    pub readout_b: DenseMatrix,
}

/// Multipliers on the default initialisation scales.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitScales {
    /// Scale of the orthogonal recall matrices.
    pub recall: f64,
    /// Multiplier on the `1/√fan_in` Gaussian used for sublayers and gates.
    pub sublayer: f64,
}

impl Default for InitScales {
    fn default() -> Self {
        Self {
            recall: 0.5,
            sublayer: 1.0,
        }
    }
}

fn gaussian(rng: &mut Rng, rows: usize, cols: usize, fan_in: usize, mult: f64) -> DenseMatrix {
    rng.normal_matrix(rows, cols, mult / (fan_in as f64).sqrt())
}

fn ones(n: usize) -> DenseMatrix {
    DenseMatrix::from_fn(n, 1, |_, _| 1.0)
}

impl GruParams {
    fn init(d: usize, rng: &mut Rng, mult: f64) -> Self {
        Self {
            w_z: gaussian(rng, d, d, d, mult),
            u_z: gaussian(rng, d, d, d, mult),
            b_z: DenseMatrix::zeros(d, 1),
            w_r: gaussian(rng, d, d, d, mult),
            u_r: gaussian(rng, d, d, d, mult),
            b_r: DenseMatrix::zeros(d, 1),
            w_n: gaussian(rng, d, d, d, mult),
            u_n: gaussian(rng, d, d, d, mult),
            b_n: DenseMatrix::zeros(d, 1),
        }
    }
}

impl NetParams {
    pub fn init(cfg: &NetConfig, rng: &mut Rng, scales: InitScales) -> Self {
        let d = cfg.d;
        let recall = cfg.recall.has_recall().then(|| RecallParams {
            w_x: rng.orthogonal_matrix(d).scale(scales.recall),
            w_0: rng.orthogonal_matrix(d).scale(scales.recall),
        });
        let mix = (0..cfg.mix_heads)
            .map(|_| {
                let weights = match cfg.mix_bandwidth {
                    MixBandwidth::Banded(b) => {
                        gaussian(rng, 1, 2 * b + 1, 2 * b + 1, scales.sublayer)
                    }
                    MixBandwidth::Full => {
                        gaussian(rng, cfg.seq_len, cfg.seq_len, cfg.seq_len, scales.sublayer)
                    }
                };
                MixHead {
                    weights,
                    proj: gaussian(rng, d, d, d, scales.sublayer),
                }
            })
            .collect();
        let mlp = MlpParams {
            w1: gaussian(rng, cfg.mlp_hidden, d, d, scales.sublayer),
            b1: DenseMatrix::zeros(cfg.mlp_hidden, 1),
            w2: gaussian(rng, d, cfg.mlp_hidden, cfg.mlp_hidden, scales.sublayer),
            b2: DenseMatrix::zeros(d, 1),
        };
        let mut site = || SiteParams {
            norm_in: cfg.norm.has_input_norm().then(|| ones(d)),
            norm_out: cfg.norm.has_output_norm().then(|| ones(d)),
            gru: matches!(cfg.norm, NormMode::Gru)
                .then(|| GruParams::init(d, rng, scales.sublayer)),
        };
        let sites = [site(), site()];
        Self {
            recall,
            mix,
            mlp,
            sites,
        }
    }

    /// Parameters in declaration order, the order used for flattening and
    /// serialisation.
    pub fn tensors(&self) -> Vec<&DenseMatrix> {
        let mut out = Vec::new();
        if let Some(r) = &self.recall {
            out.extend([&r.w_x, &r.w_0]);
        }
        for h in &self.mix {
            out.extend([&h.weights, &h.proj]);
        }
        out.extend([&self.mlp.w1, &self.mlp.b1, &self.mlp.w2, &self.mlp.b2]);
        for s in &self.sites {
            out.extend(s.norm_in.iter());
            out.extend(s.norm_out.iter());
            if let Some(g) = &s.gru {
                out.extend([
                    &g.w_z, &g.u_z, &g.b_z, &g.w_r, &g.u_r, &g.b_r, &g.w_n, &g.u_n, &g.b_n,
                ]);
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut DenseMatrix> {
        let mut out = Vec::new();
        if let Some(r) = &mut self.recall {
            out.extend([&mut r.w_x, &mut r.w_0]);
        }
        for h in &mut self.mix {
            out.extend([&mut h.weights, &mut h.proj]);
        }
        let m = &mut self.mlp;
        out.extend([&mut m.w1, &mut m.b1, &mut m.w2, &mut m.b2]);
        for s in &mut self.sites {
            out.extend(s.norm_in.iter_mut());
            out.extend(s.norm_out.iter_mut());
            if let Some(g) = &mut s.gru {
                out.extend([
                    &mut g.w_z, &mut g.u_z, &mut g.b_z, &mut g.w_r, &mut g.u_r, &mut g.b_r,
                    &mut g.w_n, &mut g.u_n, &mut g.b_n,
                ]);
            }
        }
        out
    }

    /// Human-readable names aligned with [`Self::tensors`].
    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.recall.is_some() {
            out.extend(["recall.w_x".to_string(), "recall.w_0".to_string()]);
        }
        for i in 0..self.mix.len() {
            out.push(format!("mix{i}.weights"));
            out.push(format!("mix{i}.proj"));
        }
        out.extend(["mlp.w1", "mlp.b1", "mlp.w2", "mlp.b2"].map(String::from));
        for (k, s) in self.sites.iter().enumerate() {
            if s.norm_in.is_some() {
                out.push(format!("site{k}.norm_in"));
            }
            if s.norm_out.is_some() {
                out.push(format!("site{k}.norm_out"));
            }
            if s.gru.is_some() {
                for n in [
                    "w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_n", "u_n", "b_n",
                ] {
                    out.push(format!("site{k}.gru.{n}"));
                }
            }
        }
        out
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.as_mut_slice().fill(0.0);
        }
        z
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.as_slice().len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors()
            .iter()
            .flat_map(|t| t.as_slice().iter().copied())
            .collect()
    }

    /// Overwrites parameters from a flat vector in declaration order.
    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "flat parameter length");
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.as_slice().len();
            t.as_mut_slice().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
    }

    /// Adds independent Gaussian noise to every parameter.
    pub fn jitter(&mut self, rng: &mut Rng, std: f64) {
        for t in self.tensors_mut() {
            for v in t.as_mut_slice() {
                *v += std * rng.normal();
            }
        }
    }
}

impl IoHead {
    pub fn init(d: usize, vocab: usize, classes: usize, rng: &mut Rng) -> Self {
        Self {
            embed: rng.normal_matrix(vocab, d, 1.0),
            readout_w: gaussian(rng, classes, d, d, 1.0),
            readout_b: DenseMatrix::zeros(classes, 1),
        }
    }

    pub fn tensors(&self) -> Vec<&DenseMatrix> {
        vec![&self.embed, &self.readout_w, &self.readout_b]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut DenseMatrix> {
        vec![&mut self.embed, &mut self.readout_w, &mut self.readout_b]
    }

    pub fn tensor_names(&self) -> Vec<String> {
        ["head.embed", "head.readout_w", "head.readout_b"]
            .map(String::from)
            .to_vec()
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.as_mut_slice().fill(0.0);
        }
        z
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::config::RecallMode;

    #[test]
    fn autonomous_has_no_recall_params() {
        let cfg = NetConfig::new(4, 3, RecallMode::Autonomous, NormMode::Gru);
        let p = NetParams::init(&cfg, &mut Rng::new(0), InitScales::default());
        assert!(p.recall.is_none());
        assert!(p
            .sites
            .iter()
            .all(|s| s.gru.is_some() && s.norm_in.is_none()));
        assert_eq!(p.tensors().len(), p.tensor_names().len());
    }

    #[test]
    fn flat_roundtrip() {
        let cfg = NetConfig::new(3, 2, RecallMode::Internal, NormMode::Peri);
        let mut p = NetParams::init(&cfg, &mut Rng::new(1), InitScales::default());
        let flat = p.to_flat();
        let mut q = p.zeros_like();
        q.set_flat(&flat);
        assert_eq!(p, q);
        p.jitter(&mut Rng::new(2), 0.1);
        assert_ne!(p, q);
    }
}
