use crate::linalg::{DenseMatrix, Rng};

use super::config::{MixBandwidth, NetConfig, NormMode, RecallMode};
use super::layers::{
    apply_tokenwise, block_diag, gru_forward, gru_jacobians, gru_vjp, mix_forward, mix_jacobian,
    mix_vjp, mlp_forward, mlp_jacobian, mlp_vjp, outer_sum_acc, rms_norm, rms_norm_jacobian,
    rms_norm_vjp, tokens_w_acc, GruCache,
};
use super::params::{InitScales, NetParams, RecallParams, SiteParams};
use super::state::StateMatrix;
use super::NetError;

/// `(∂x_{t+1}/∂x_t, ∂x_{t+1}/∂x_0)` over token-major flattened states.
#[derive(Debug, Clone, PartialEq)]
pub struct StepJacobians {
    pub j_state: DenseMatrix,
    pub j_input: DenseMatrix,
}

/// Which sublayer a residual site wraps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Sublayer {
    Mix,
    Mlp,
}

const SITE_SUBLAYERS: [Sublayer; 2] = [Sublayer::Mix, Sublayer::Mlp];

/// Intermediate values of one residual site.
#[derive(Debug, Clone)]
pub struct SiteTrace {
    stream: StateMatrix,
    input: StateMatrix,
    normed_in: Option<StateMatrix>,
    mlp_pre: Option<Vec<f64>>,
    sub_out: StateMatrix,
    /// `s + h` under post-norm.
    pre_outer: Option<StateMatrix>,
    gru: Option<GruCache>,
    output: StateMatrix,
}

/// Everything the reverse pass needs from one forward step.
#[derive(Debug, Clone)]
pub struct StepTrace {
    x: StateMatrix,
    x0: StateMatrix,
    sites: [SiteTrace; 2],
    /// `g(z, x0)` for internal recall.
    inner_recall: Option<StateMatrix>,
}

impl StepTrace {
    pub fn output(&self) -> &StateMatrix {
        &self.sites[1].output
    }

    pub fn input_state(&self) -> &StateMatrix {
        &self.x
    }
}

/// A weight-tied looped network: one step maps `(x_t, x_0)` to `x_{t+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopedNet {
    config: NetConfig,
    params: NetParams,
}

fn check_dims(m: &DenseMatrix, rows: usize, cols: usize, name: &str) -> Result<(), NetError> {
    if m.shape() != (rows, cols) {
        return Err(NetError::Shape(format!(
            "{name} is {:?}, expected {rows}x{cols}",
            m.shape()
        )));
    }
    if !m.is_finite() {
        return Err(NetError::Config(format!("{name} has non-finite entries")));
    }
    Ok(())
}

impl LoopedNet {
    pub fn new(config: NetConfig, params: NetParams) -> Result<Self, NetError> {
        config.validate()?;
        let d = config.d;
        match (&params.recall, config.recall.has_recall()) {
            (Some(r), true) => {
                check_dims(&r.w_x, d, d, "recall.w_x")?;
                check_dims(&r.w_0, d, d, "recall.w_0")?;
            }
            (None, false) => {}
            (Some(_), false) => {
                return Err(NetError::Config(
                    "autonomous networks carry no recall parameters".into(),
                ))
            }
            (None, true) => return Err(NetError::Config("missing recall parameters".into())),
        }
        if params.mix.len() != config.mix_heads {
            return Err(NetError::Config(format!(
                "expected {} mixing heads, got {}",
                config.mix_heads,
                params.mix.len()
            )));
        }
        for (i, h) in params.mix.iter().enumerate() {
            match config.mix_bandwidth {
                MixBandwidth::Banded(b) => {
                    check_dims(&h.weights, 1, 2 * b + 1, &format!("mix{i}.weights"))?
                }
                MixBandwidth::Full => check_dims(
                    &h.weights,
                    config.seq_len,
                    config.seq_len,
                    &format!("mix{i}.weights"),
                )?,
            }
            check_dims(&h.proj, d, d, &format!("mix{i}.proj"))?;
        }
        let hid = config.mlp_hidden;
        check_dims(&params.mlp.w1, hid, d, "mlp.w1")?;
        check_dims(&params.mlp.b1, hid, 1, "mlp.b1")?;
        check_dims(&params.mlp.w2, d, hid, "mlp.w2")?;
        check_dims(&params.mlp.b2, d, 1, "mlp.b2")?;
        for (k, s) in params.sites.iter().enumerate() {
            if s.norm_in.is_some() != config.norm.has_input_norm()
                || s.norm_out.is_some() != config.norm.has_output_norm()
                || s.gru.is_some() != matches!(config.norm, NormMode::Gru)
            {
                return Err(NetError::Config(format!(
                    "site {k} parameters do not match norm mode {}",
                    config.norm
                )));
            }
            for g in s.norm_in.iter().chain(s.norm_out.iter()) {
                check_dims(g, d, 1, &format!("site{k} gain"))?;
            }
            if let Some(g) = &s.gru {
                for (m, name) in [
                    (&g.w_z, "w_z"),
                    (&g.u_z, "u_z"),
                    (&g.w_r, "w_r"),
                    (&g.u_r, "u_r"),
                    (&g.w_n, "w_n"),
                    (&g.u_n, "u_n"),
                ] {
                    check_dims(m, d, d, &format!("site{k}.gru.{name}"))?;
                }
                for (m, name) in [(&g.b_z, "b_z"), (&g.b_r, "b_r"), (&g.b_n, "b_n")] {
                    check_dims(m, d, 1, &format!("site{k}.gru.{name}"))?;
                }
            }
        }
        Ok(Self { config, params })
    }

    /// Freshly initialised network with the default scales.
    pub fn random(config: NetConfig, rng: &mut Rng) -> Result<Self, NetError> {
        Self::random_scaled(config, rng, InitScales::default())
    }

    pub fn random_scaled(
        config: NetConfig,
        rng: &mut Rng,
        scales: InitScales,
    ) -> Result<Self, NetError> {
        config.validate()?;
        let params = NetParams::init(&config, rng, scales);
        Self::new(config, params)
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &NetParams {
        &self.params
    }

    /// Mutable parameter access for optimisers. Shapes must be preserved.
    pub fn params_mut(&mut self) -> &mut NetParams {
        &mut self.params
    }

    pub fn into_parts(self) -> (NetConfig, NetParams) {
        (self.config, self.params)
    }

    fn banded(&self) -> bool {
        matches!(self.config.mix_bandwidth, MixBandwidth::Banded(_))
    }

    fn eps(&self) -> f64 {
        self.config.norm_eps
    }

    fn recall_params(&self) -> Result<&RecallParams, NetError> {
        self.params
            .recall
            .as_ref()
            .ok_or_else(|| NetError::Config("autonomous network has no recall".into()))
    }

    fn check_pair(&self, x: &StateMatrix, x0: &StateMatrix) -> Result<(), NetError> {
        self.config.check_state_shape(x.d(), x.len())?;
        if self.config.recall.has_recall() && !x.same_shape(x0) {
            return Err(NetError::Shape(format!(
                "x_t is {:?} but x0 is {:?}",
                x.shape(),
                x0.shape()
            )));
        }
        Ok(())
    }

    /// Linear recall `W_x x + W_0 x0`.
    pub fn recall_combine(
        &self,
        x: &StateMatrix,
        x0: &StateMatrix,
    ) -> Result<StateMatrix, NetError> {
        let r = self.recall_params()?;
        self.config.check_state_shape(x.d(), x.len())?;
        if !x.same_shape(x0) {
            return Err(NetError::Shape(format!(
                "x is {:?} but x0 is {:?}",
                x.shape(),
                x0.shape()
            )));
        }
        let mut out = apply_tokenwise(&r.w_x, x);
        out.add_assign(&apply_tokenwise(&r.w_0, x0));
        Ok(out)
    }

    fn sublayer_forward(
        &self,
        which: Sublayer,
        v: &StateMatrix,
    ) -> (StateMatrix, Option<Vec<f64>>) {
        match which {
            Sublayer::Mix => (mix_forward(&self.params.mix, self.banded(), v), None),
            Sublayer::Mlp => {
                let (out, pre) = mlp_forward(&self.params.mlp, v);
                (out, Some(pre))
            }
        }
    }

    fn sublayer_jacobian(
        &self,
        which: Sublayer,
        v: &StateMatrix,
        mlp_pre: Option<&[f64]>,
    ) -> DenseMatrix {
        let (d, len) = v.shape();
        match which {
            Sublayer::Mix => mix_jacobian(&self.params.mix, self.banded(), d, len),
            Sublayer::Mlp => {
                let owned;
                let pre = match mlp_pre {
                    Some(p) => p,
                    None => {
                        owned = mlp_forward(&self.params.mlp, v).1;
                        &owned
                    }
                };
                mlp_jacobian(&self.params.mlp, pre, d, len)
            }
        }
    }

    fn site_forward(&self, k: usize, stream: StateMatrix, input: StateMatrix) -> SiteTrace {
        let site: &SiteParams = &self.params.sites[k];
        let eps = self.eps();
        let normed_in = site
            .norm_in
            .as_ref()
            .map(|g| rms_norm(&input, g.as_slice(), eps));
        let h_in = normed_in.as_ref().unwrap_or(&input);
        let (sub_out, mlp_pre) = self.sublayer_forward(SITE_SUBLAYERS[k], h_in);
        let mut pre_outer = None;
        let mut gru = None;
        let output = match self.config.norm {
            NormMode::None | NormMode::Pre => stream.add(&sub_out).expect("same shape"),
            NormMode::Post => {
                let v = stream.add(&sub_out).expect("same shape");
                let gain = site.norm_out.as_ref().expect("post gain");
                let y = rms_norm(&v, gain.as_slice(), eps);
                pre_outer = Some(v);
                y
            }
            NormMode::Peri => {
                let gain = site.norm_out.as_ref().expect("peri gain");
                stream
                    .add(&rms_norm(&sub_out, gain.as_slice(), eps))
                    .expect("same shape")
            }
            NormMode::Gru => {
                let (y, cache) =
                    gru_forward(site.gru.as_ref().expect("gru params"), &stream, &sub_out);
                gru = Some(cache);
                y
            }
        };
        SiteTrace {
            stream,
            input,
            normed_in,
            mlp_pre,
            sub_out,
            pre_outer,
            gru,
            output,
        }
    }

    /// Dense `(∂out/∂stream, ∂out/∂input)` of a traced site.
    fn site_jacobians(&self, k: usize, t: &SiteTrace) -> (DenseMatrix, DenseMatrix) {
        let site = &self.params.sites[k];
        let eps = self.eps();
        let n = t.stream.dim();
        let h_in = t.normed_in.as_ref().unwrap_or(&t.input);
        let mut h_jac = self.sublayer_jacobian(SITE_SUBLAYERS[k], h_in, t.mlp_pre.as_deref());
        if let Some(g) = &site.norm_in {
            let nj = rms_norm_jacobian(&t.input, g.as_slice(), eps);
            h_jac = h_jac.matmul(&nj).expect("square");
        }
        match self.config.norm {
            NormMode::None | NormMode::Pre => (DenseMatrix::identity(n), h_jac),
            NormMode::Post => {
                let gain = site.norm_out.as_ref().expect("post gain");
                let nj = rms_norm_jacobian(
                    t.pre_outer.as_ref().expect("post trace"),
                    gain.as_slice(),
                    eps,
                );
                let ju = nj.matmul(&h_jac).expect("square");
                (nj, ju)
            }
            NormMode::Peri => {
                let gain = site.norm_out.as_ref().expect("peri gain");
                let nj = rms_norm_jacobian(&t.sub_out, gain.as_slice(), eps);
                (DenseMatrix::identity(n), nj.matmul(&h_jac).expect("square"))
            }
            NormMode::Gru => {
                let p = site.gru.as_ref().expect("gru params");
                let (js, jin) = gru_jacobians(p, &t.stream, t.gru.as_ref().expect("gru trace"));
                (js, jin.matmul(&h_jac).expect("square"))
            }
        }
    }

    /// One loop iteration with all intermediates kept.
    pub fn step_traced(&self, x: &StateMatrix, x0: &StateMatrix) -> Result<StepTrace, NetError> {
        self.check_pair(x, x0)?;
        let (site0, site1, inner_recall) = match self.config.recall {
            RecallMode::Autonomous => {
                let s0 = self.site_forward(0, x.clone(), x.clone());
                let z = s0.output.clone();
                let s1 = self.site_forward(1, z.clone(), z);
                (s0, s1, None)
            }
            RecallMode::External => {
                let g = self.recall_combine(x, x0)?;
                let s0 = self.site_forward(0, g.clone(), g);
                let z = s0.output.clone();
                let s1 = self.site_forward(1, z.clone(), z);
                (s0, s1, None)
            }
            RecallMode::Internal => {
                let g = self.recall_combine(x, x0)?;
                let s0 = self.site_forward(0, x.clone(), g);
                let z = s0.output.clone();
                let g2 = self.recall_combine(&z, x0)?;
                let s1 = self.site_forward(1, z, g2.clone());
                (s0, s1, Some(g2))
            }
        };
        if !site1.output.is_finite() {
            return Err(NetError::NumericOverflow);
        }
        Ok(StepTrace {
            x: x.clone(),
            x0: x0.clone(),
            sites: [site0, site1],
            inner_recall,
        })
    }

    /// `x_{t+1} = f(x_t, x_0)`. Autonomous networks ignore `x0`.
    pub fn step(&self, x: &StateMatrix, x0: &StateMatrix) -> Result<StateMatrix, NetError> {
        let trace = self.step_traced(x, x0)?;
        let [_, s1] = trace.sites;
        Ok(s1.output)
    }

    /// Analytic per-step Jacobians by chain rule through both residual sites.
    pub fn step_jacobians(
        &self,
        x: &StateMatrix,
        x0: &StateMatrix,
    ) -> Result<StepJacobians, NetError> {
        let trace = self.step_traced(x, x0)?;
        let n = x.dim();
        let (s0, u0) = self.site_jacobians(0, &trace.sites[0]);
        let (s1, u1) = self.site_jacobians(1, &trace.sites[1]);
        let mm = |a: &DenseMatrix, b: &DenseMatrix| a.matmul(b).expect("square");
        let add = |a: &DenseMatrix, b: &DenseMatrix| a.add(b).expect("square");
        let jac = match self.config.recall {
            RecallMode::Autonomous => StepJacobians {
                j_state: mm(&add(&s1, &u1), &add(&s0, &u0)),
                j_input: DenseMatrix::zeros(n, n),
            },
            RecallMode::External => {
                let (gx, g0) = self.recall_jacobians(x.len())?;
                let tail = mm(&add(&s1, &u1), &add(&s0, &u0));
                StepJacobians {
                    j_state: mm(&tail, &gx),
                    j_input: mm(&tail, &g0),
                }
            }
            RecallMode::Internal => {
                let (gx, g0) = self.recall_jacobians(x.len())?;
                let dz_dx = add(&s0, &mm(&u0, &gx));
                let dz_dx0 = mm(&u0, &g0);
                let dout_dz = add(&s1, &mm(&u1, &gx));
                StepJacobians {
                    j_state: mm(&dout_dz, &dz_dx),
                    j_input: add(&mm(&u1, &g0), &mm(&dout_dz, &dz_dx0)),
                }
            }
        };
        Ok(jac)
    }

    /// `(I_L ⊗ W_x, I_L ⊗ W_0)`.
    pub fn recall_jacobians(&self, len: usize) -> Result<(DenseMatrix, DenseMatrix), NetError> {
        let r = self.recall_params()?;
        let gx = block_diag(&vec![r.w_x.clone(); len]);
        let g0 = block_diag(&vec![r.w_0.clone(); len]);
        Ok((gx, g0))
    }

    /// The reachability matrix of a recall network without normalisation,
    /// assembled directly from sublayer Jacobians at `x*`:
    ///
    /// external: `(I + h2'(z*)) (I + h1'(g*)) ∂g/∂x`
    /// internal: `(I + h2'(g(z*)) ∂g/∂x) (I + h1'(g(x*)) ∂g/∂x)`
    ///
    /// Returns `None` for autonomous networks or any normalised variant.
    pub fn recall_stability_matrix(
        &self,
        x_star: &StateMatrix,
        x0: &StateMatrix,
    ) -> Result<Option<DenseMatrix>, NetError> {
        if !self.config.recall.has_recall() || self.config.norm != NormMode::None {
            return Ok(None);
        }
        self.check_pair(x_star, x0)?;
        let n = x_star.dim();
        let eye = DenseMatrix::identity(n);
        let (gx, _) = self.recall_jacobians(x_star.len())?;
        let g = self.recall_combine(x_star, x0)?;
        let h1 = self.sublayer_jacobian(Sublayer::Mix, &g, None);
        let mm = |a: &DenseMatrix, b: &DenseMatrix| a.matmul(b).expect("square");
        let m = match self.config.recall {
            RecallMode::External => {
                let z = g.add(&self.sublayer_forward(Sublayer::Mix, &g).0)?;
                let h2 = self.sublayer_jacobian(Sublayer::Mlp, &z, None);
                mm(&mm(&eye.add(&h2)?, &eye.add(&h1)?), &gx)
            }
            RecallMode::Internal => {
                let z = x_star.add(&self.sublayer_forward(Sublayer::Mix, &g).0)?;
                let gz = self.recall_combine(&z, x0)?;
                let h2 = self.sublayer_jacobian(Sublayer::Mlp, &gz, None);
                mm(&eye.add(&mm(&h2, &gx))?, &eye.add(&mm(&h1, &gx))?)
            }
            RecallMode::Autonomous => unreachable!(),
        };
        Ok(Some(m))
    }

    fn site_backward(
        &self,
        k: usize,
        t: &SiteTrace,
        obar: &StateMatrix,
        grads: &mut NetParams,
    ) -> (StateMatrix, StateMatrix) {
        let site = &self.params.sites[k];
        let eps = self.eps();
        let (sbar, hbar) = match self.config.norm {
            NormMode::None | NormMode::Pre => (obar.clone(), obar.clone()),
            NormMode::Post => {
                let gain = site.norm_out.as_ref().expect("post gain");
                let g = grads.sites[k].norm_out.as_mut().expect("post grad");
                let vbar = rms_norm_vjp(
                    t.pre_outer.as_ref().expect("post trace"),
                    gain.as_slice(),
                    eps,
                    obar,
                    g.as_mut_slice(),
                );
                (vbar.clone(), vbar)
            }
            NormMode::Peri => {
                let gain = site.norm_out.as_ref().expect("peri gain");
                let g = grads.sites[k].norm_out.as_mut().expect("peri grad");
                let hbar = rms_norm_vjp(&t.sub_out, gain.as_slice(), eps, obar, g.as_mut_slice());
                (obar.clone(), hbar)
            }
            NormMode::Gru => {
                let p = site.gru.as_ref().expect("gru params");
                let g = grads.sites[k].gru.as_mut().expect("gru grad");
                gru_vjp(
                    p,
                    &t.stream,
                    &t.sub_out,
                    t.gru.as_ref().expect("gru trace"),
                    obar,
                    g,
                )
            }
        };
        let h_in = t.normed_in.as_ref().unwrap_or(&t.input);
        let h_in_bar = match SITE_SUBLAYERS[k] {
            Sublayer::Mix => mix_vjp(&self.params.mix, self.banded(), h_in, &hbar, &mut grads.mix),
            Sublayer::Mlp => mlp_vjp(
                &self.params.mlp,
                h_in,
                t.mlp_pre.as_ref().expect("mlp trace"),
                &hbar,
                &mut grads.mlp,
            ),
        };
        let ubar = match &site.norm_in {
            Some(gain) => {
                let g = grads.sites[k].norm_in.as_mut().expect("norm_in grad");
                rms_norm_vjp(&t.input, gain.as_slice(), eps, &h_in_bar, g.as_mut_slice())
            }
            None => h_in_bar,
        };
        (sbar, ubar)
    }

    fn recall_backward(
        &self,
        x: &StateMatrix,
        x0: &StateMatrix,
        gbar: &StateMatrix,
        grads: &mut NetParams,
    ) -> (StateMatrix, StateMatrix) {
        let r = self.params.recall.as_ref().expect("recall params");
        let rg = grads.recall.as_mut().expect("recall grads");
        let (d, len) = x.shape();
        let mut xbar = StateMatrix::zeros(d, len);
        let mut x0bar = StateMatrix::zeros(d, len);
        let gb = gbar.as_slice();
        outer_sum_acc(&mut rg.w_x, gb, x.as_slice());
        outer_sum_acc(&mut rg.w_0, gb, x0.as_slice());
        tokens_w_acc(&r.w_x, gb, xbar.as_mut_slice());
        tokens_w_acc(&r.w_0, gb, x0bar.as_mut_slice());
        (xbar, x0bar)
    }

    /// Reverse pass through one traced step. Given `∂L/∂x_{t+1}`, accumulates
    /// parameter gradients into `grads` and returns `(∂L/∂x_t, ∂L/∂x_0)`.
    pub fn backward_step(
        &self,
        trace: &StepTrace,
        out_bar: &StateMatrix,
        grads: &mut NetParams,
    ) -> (StateMatrix, StateMatrix) {
        let (d, len) = trace.x.shape();
        let [t0, t1] = &trace.sites;
        match self.config.recall {
            RecallMode::Autonomous => {
                let (zs, zu) = self.site_backward(1, t1, out_bar, grads);
                let zbar = zs.add(&zu).expect("same shape");
                let (xs, xu) = self.site_backward(0, t0, &zbar, grads);
                (xs.add(&xu).expect("same shape"), StateMatrix::zeros(d, len))
            }
            RecallMode::External => {
                let (zs, zu) = self.site_backward(1, t1, out_bar, grads);
                let zbar = zs.add(&zu).expect("same shape");
                let (gs, gu) = self.site_backward(0, t0, &zbar, grads);
                let gbar = gs.add(&gu).expect("same shape");
                self.recall_backward(&trace.x, &trace.x0, &gbar, grads)
            }
            RecallMode::Internal => {
                let (mut zbar, g2bar) = self.site_backward(1, t1, out_bar, grads);
                let z = &t0.output;
                let (z_from_g, mut x0bar) = self.recall_backward(z, &trace.x0, &g2bar, grads);
                zbar.add_assign(&z_from_g);
                let (mut xbar, g1bar) = self.site_backward(0, t0, &zbar, grads);
                let (x_from_g, x0bar1) = self.recall_backward(&trace.x, &trace.x0, &g1bar, grads);
                xbar.add_assign(&x_from_g);
                x0bar.add_assign(&x0bar1);
                debug_assert!(trace.inner_recall.is_some());
                (xbar, x0bar)
            }
        }
    }
}
