//! Net recipes and the measurements behind the verification subcommands.

use anyhow::{bail, Context, Result};
use looplab_core::dynamics::{
    autonomous_regime_probe, classify_fixed_point, e_sensitivity, input_gradient_limit,
    input_gradient_unrolled, random_contractive_matrix, run_trajectory, Classification,
    ClassifyOptions, LoopMap, RegimeReport, RegimeTarget, Tolerances, TrajectoryStatus,
};
use looplab_core::linalg::{inverse, spectral_radius, DenseMatrix, Rng};
use looplab_core::netcore::{
    InitScales, LoopedNet, MixBandwidth, NetConfig, NormMode, RecallMode, StateMatrix,
};

/// Architecture and initialisation scales for randomly drawn nets.
#[derive(Debug, Clone, PartialEq)]
pub struct NetRecipe {
    pub recall: RecallMode,
    pub norm: NormMode,
    pub d: usize,
    pub len: usize,
    /// MLP width; `None` means `2d`.
    pub hidden: Option<usize>,
    pub bandwidth: MixBandwidth,
    pub heads: usize,
    pub recall_scale: f64,
    pub sublayer_scale: f64,
    /// Gaussian noise added to every parameter after initialisation.
    pub jitter: f64,
}

impl NetRecipe {
    pub fn new(recall: RecallMode, norm: NormMode, d: usize, len: usize) -> Self {
        Self {
            recall,
            norm,
            d,
            len,
            hidden: None,
            bandwidth: MixBandwidth::Banded(1),
            heads: 1,
            recall_scale: 0.5,
            sublayer_scale: 0.3,
            jitter: 0.0,
        }
    }

    pub fn config(&self) -> NetConfig {
        let mut cfg = NetConfig::new(self.d, self.len, self.recall, self.norm);
        cfg.mlp_hidden = self.hidden.unwrap_or(2 * self.d);
        cfg.mix_bandwidth = self.bandwidth;
        cfg.mix_heads = self.heads;
        cfg
    }

    pub fn build(&self, seed: u64) -> Result<LoopedNet> {
        let mut rng = Rng::new(seed);
        let scales = InitScales {
            recall: self.recall_scale,
            sublayer: self.sublayer_scale,
        };
        let net = LoopedNet::random_scaled(self.config(), &mut rng, scales)?;
        if self.jitter == 0.0 {
            return Ok(net);
        }
        let (cfg, mut params) = net.into_parts();
        params.jitter(&mut rng, self.jitter);
        Ok(LoopedNet::new(cfg, params)?)
    }
}

/// Internal recall keeps `x_t` on the residual stream, so random sublayers
/// leave the step Jacobian near the identity. An identity mixing kernel with
/// projection `-½ W_x⁻¹` (plus noise) cancels half of it.
pub fn damp_internal(net: LoopedNet, rng: &mut Rng) -> Result<LoopedNet> {
    let (cfg, mut p) = net.into_parts();
    let Some(recall) = p.recall.as_ref() else {
        bail!("damping needs a recall net");
    };
    let d = cfg.d;
    let w_inv = inverse(&recall.w_x).context("W_x is singular")?;
    for (k, head) in p.mix.iter_mut().enumerate() {
        if k > 0 {
            head.proj = DenseMatrix::zeros(d, d);
            continue;
        }
        let (rows, cols) = head.weights.shape();
        head.weights = match cfg.mix_bandwidth {
            MixBandwidth::Banded(b) => DenseMatrix::from_fn(rows, cols, |_, j| f64::from(j == b)),
            MixBandwidth::Full => DenseMatrix::identity(rows),
        };
        head.proj = w_inv.scale(-0.5).add(&rng.normal_matrix(d, d, 0.05))?;
    }
    Ok(LoopedNet::new(cfg, p)?)
}

/// Central-difference Jacobian of `f` over a flattened state.
pub fn fd_jacobian(
    x: &StateMatrix,
    h: f64,
    f: impl Fn(&StateMatrix) -> Result<StateMatrix>,
) -> Result<DenseMatrix> {
    let n = x.dim();
    let mut jac = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let mut xp = x.clone();
        xp.as_mut_slice()[j] += h;
        let mut xm = x.clone();
        xm.as_mut_slice()[j] -= h;
        let fp = f(&xp)?;
        let fm = f(&xm)?;
        for i in 0..n {
            jac.row_mut(i)[j] = (fp.as_slice()[i] - fm.as_slice()[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// Largest entrywise difference relative to the largest entry of either matrix.
pub fn relative_max_error(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    let scale = a.max_abs().max(b.max_abs()).max(1e-300);
    match a.sub(b) {
        Ok(diff) => diff.max_abs() / scale,
        Err(_) => f64::INFINITY,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JacobianTrial {
    pub recall: RecallMode,
    pub norm: NormMode,
    pub trial: usize,
    pub err_state: f64,
    pub err_input: f64,
}

impl JacobianTrial {
    pub fn max_error(&self) -> f64 {
        self.err_state.max(self.err_input)
    }
}

/// Analytic step Jacobians of one random net against central differences
/// (`h = 1e-5`) at a random state and input.
pub fn jacobian_trial(
    recall: RecallMode,
    norm: NormMode,
    d: usize,
    len: usize,
    seed: u64,
    trial: usize,
) -> Result<JacobianTrial> {
    let s = Rng::substream(seed, &[recall as u64, norm as u64, trial as u64]).next_u64();
    let mut recipe = NetRecipe::new(recall, norm, d, len);
    recipe.heads = 1 + (s % 2) as usize;
    recipe.bandwidth = if trial.is_multiple_of(3) {
        MixBandwidth::Banded(1)
    } else {
        MixBandwidth::Full
    };
    recipe.recall_scale = 0.5;
    recipe.sublayer_scale = 1.0;
    recipe.jitter = 0.2;
    let net = recipe.build(s)?;
    let mut rng = Rng::substream(s, &[1]);
    let x = StateMatrix::random(d, len, 1.0, &mut rng);
    let x0 = StateMatrix::random(d, len, 1.0, &mut rng);
    let jac = net.step_jacobians(&x, &x0)?;
    let h = 1e-5;
    let fd_x = fd_jacobian(&x, h, |v| Ok(net.step(v, &x0)?))?;
    let fd_0 = fd_jacobian(&x0, h, |v| Ok(net.step(&x, v)?))?;
    Ok(JacobianTrial {
        recall,
        norm,
        trial,
        err_state: relative_max_error(&jac.j_state, &fd_x),
        err_input: relative_max_error(&jac.j_input, &fd_0),
    })
}

/// A converged stable run of a recall net.
#[derive(Debug, Clone)]
pub struct StableCase {
    pub net: LoopedNet,
    pub net_seed: u64,
    pub x0: StateMatrix,
    pub x_star: StateMatrix,
}

/// Iterates from `e` and returns the fixed point, if the run converges.
pub fn converge(
    map: &impl LoopMap,
    x0: &StateMatrix,
    e: &StateMatrix,
    max_iters: usize,
) -> Result<Option<StateMatrix>> {
    let tr = run_trajectory(map, x0, e, max_iters, &Tolerances::default())?;
    Ok((tr.status == TrajectoryStatus::Converged).then(|| tr.final_state().clone()))
}

/// Draws recall nets until `count` of them converge from `e = 0` to a fixed
/// point with `ρ(∂f/∂x) ≤ rho_max`. Internal-recall nets are damped first.
pub fn find_stable_cases(
    recipe: &NetRecipe,
    count: usize,
    rho_max: f64,
    max_iters: usize,
    seed: u64,
) -> Result<Vec<StableCase>> {
    if !recipe.recall.has_recall() {
        bail!("stable cases need a recall mode");
    }
    let mut out = Vec::with_capacity(count);
    let limit = 50 * count.max(1);
    for attempt in 0..limit {
        if out.len() == count {
            break;
        }
        let net_seed = Rng::substream(seed, &[recipe.recall as u64, attempt as u64]).next_u64();
        let mut net = recipe.build(net_seed)?;
        if recipe.recall == RecallMode::Internal {
            net = damp_internal(net, &mut Rng::substream(net_seed, &[2]))?;
        }
        let mut rng = Rng::substream(net_seed, &[1]);
        let x0 = StateMatrix::random(recipe.d, recipe.len, 1.0, &mut rng);
        let zeros = StateMatrix::zeros(recipe.d, recipe.len);
        let Some(x_star) = converge(&net, &x0, &zeros, max_iters)? else {
            continue;
        };
        let rho = spectral_radius(&net.step_jacobians(&x_star, &x0)?.j_state, 1e-9)?;
        if rho <= rho_max {
            out.push(StableCase {
                net,
                net_seed,
                x0,
                x_star,
            });
        }
    }
    if out.len() < count {
        bail!(
            "found only {} of {count} stable {} nets in {limit} draws",
            out.len(),
            recipe.recall
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbOptions {
    pub trials: usize,
    pub radius: f64,
    /// Attracting: distance back to `x*` that counts as recaptured.
    pub recapture_tol: f64,
    /// Repelling: distance from `x*` that counts as escaped.
    pub escape_radius: f64,
    pub max_iters: usize,
}

impl Default for PerturbOptions {
    fn default() -> Self {
        Self {
            trials: 100,
            radius: 1e-3,
            recapture_tol: 1e-8,
            escape_radius: 1e-2,
            max_iters: 5000,
        }
    }
}

/// Number of random perturbations of size `radius` whose fate matches the
/// classification: recaptured for attracting points, ejected for repelling
/// ones. `None` for marginal points.
pub fn perturbation_agreement(
    map: &impl LoopMap,
    x0: &StateMatrix,
    x_star: &StateMatrix,
    class: Classification,
    opts: &PerturbOptions,
    rng: &mut Rng,
) -> Result<Option<usize>> {
    if class == Classification::Marginal {
        return Ok(None);
    }
    let (d, len) = x_star.shape();
    let mut agree = 0;
    for _ in 0..opts.trials {
        let dir = StateMatrix::random(d, len, 1.0, rng);
        let start = x_star.add(&dir.scale(opts.radius / dir.norm()))?;
        let ok = match class {
            Classification::Attracting => converge(map, x0, &start, opts.max_iters)?
                .is_some_and(|x| x.distance(x_star) <= opts.recapture_tol),
            _ => {
                let mut x = start;
                let mut escaped = false;
                for _ in 0..opts.max_iters {
                    match map.step(&x, x0) {
                        Ok(next) if next.distance(x_star) <= opts.escape_radius => x = next,
                        _ => {
                            escaped = true;
                            break;
                        }
                    }
                }
                escaped
            }
        };
        agree += usize::from(ok);
    }
    Ok(Some(agree))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudyOptions {
    pub unroll_steps: usize,
    pub sens_steps: usize,
    pub e_redraws: usize,
    pub perturb: PerturbOptions,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self {
            unroll_steps: 500,
            sens_steps: 300,
            e_redraws: 3,
            perturb: PerturbOptions::default(),
        }
    }
}

/// Gradient-limit, stability and initial-iterate measurements at one fixed point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StableStudy {
    pub rho: f64,
    pub m_rho: Option<f64>,
    pub limit_norm: f64,
    /// `‖unrolled − limit‖_F`.
    pub gap: f64,
    pub sens_first: f64,
    pub sens_last: f64,
    /// Largest distance between `x*` and the fixed point reached from a
    /// Gaussian `e`.
    pub e_shift: f64,
    pub perturb_agree: Option<usize>,
}

impl StableStudy {
    pub fn gap_bound(&self) -> f64 {
        1e-7 * (1.0 + self.limit_norm)
    }

    pub fn sens_ratio(&self) -> f64 {
        self.sens_last / self.sens_first
    }
}

pub fn study_stable_case(
    case: &StableCase,
    opts: &StudyOptions,
    rng: &mut Rng,
) -> Result<StableStudy> {
    let StableCase {
        net, x0, x_star, ..
    } = case;
    let (d, len) = x0.shape();
    let zeros = StateMatrix::zeros(d, len);
    let report = classify_fixed_point(net, x_star, x0, &ClassifyOptions::default())?;
    let limit = input_gradient_limit(net, x_star, x0)?;
    let unrolled = input_gradient_unrolled(net, x0, &zeros, opts.unroll_steps)?;
    let gap = unrolled.sub(&limit)?.frobenius_norm();
    let sens_first = e_sensitivity(net, x0, &zeros, 1)?;
    let sens_last = e_sensitivity(net, x0, &zeros, opts.sens_steps)?;
    let mut e_shift: f64 = 0.0;
    for _ in 0..opts.e_redraws {
        let e = StateMatrix::random(d, len, 1.0, rng);
        e_shift = match converge(net, x0, &e, opts.perturb.max_iters)? {
            Some(x) => e_shift.max(x.distance(x_star)),
            None => f64::INFINITY,
        };
    }
    let perturb_agree =
        perturbation_agreement(net, x0, x_star, report.classification, &opts.perturb, rng)?;
    Ok(StableStudy {
        rho: report.rho,
        m_rho: report.m_rho,
        limit_norm: limit.frobenius_norm(),
        gap,
        sens_first,
        sens_last,
        e_shift,
        perturb_agree,
    })
}

/// One measurement of the linear autonomous regime probes.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeRow {
    pub case: &'static str,
    pub index: usize,
    pub k: Option<u32>,
    pub rho: f64,
    pub measured: f64,
    pub expected: f64,
    pub relative_error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeOptions {
    pub d: usize,
    pub nets: usize,
    pub horizon: usize,
    pub trials: usize,
    pub ks: Vec<u32>,
    pub seed: u64,
}

impl Default for RegimeOptions {
    fn default() -> Self {
        Self {
            d: 4,
            nets: 20,
            horizon: 400,
            trials: 1000,
            ks: (1..=6).collect(),
            seed: 0,
        }
    }
}

/// Matrix with eigenvalues `λ` and a mildly non-normal eigenbasis.
fn with_eigenvalues(lambda: &[f64], rng: &mut Rng) -> Result<DenseMatrix> {
    let n = lambda.len();
    let s = DenseMatrix::identity(n).add(&rng.normal_matrix(n, n, 0.3 / (n as f64).sqrt()))?;
    let s_inv = inverse(&s).context("eigenbasis is singular")?;
    Ok(s.matmul(&DenseMatrix::from_diag(lambda))?.matmul(&s_inv)?)
}

/// Contractive decay rates, expansive escape fractions and near-unit
/// resolvent growth for random linear autonomous maps `x' = A x + b`.
pub fn regime_study(opts: &RegimeOptions) -> Result<Vec<RegimeRow>> {
    let d = opts.d;
    let mut rows = Vec::new();
    for i in 0..opts.nets {
        let mut rng = Rng::substream(opts.seed, &[1, i as u64]);
        let rho = rng.uniform_in(0.3, 0.9);
        let a = random_contractive_matrix(d, rho, &mut rng);
        let b = rng.normal_vec(d, 1.0);
        let target = RegimeTarget::Contractive {
            horizon: opts.horizon,
        };
        if let RegimeReport::Decay {
            rho,
            fitted_rate,
            relative_error,
        } = autonomous_regime_probe(&a, &b, &target)?
        {
            rows.push(RegimeRow {
                case: "contractive",
                index: i,
                k: None,
                rho,
                measured: fitted_rate,
                expected: rho.ln(),
                relative_error,
                pass: relative_error <= 0.05,
            });
        }
    }
    for i in 0..opts.nets {
        let mut rng = Rng::substream(opts.seed, &[2, i as u64]);
        let rho = rng.uniform_in(1.1, 2.0);
        let a = random_contractive_matrix(d, rho, &mut rng);
        let b = rng.normal_vec(d, 1.0);
        let target = RegimeTarget::Expansive {
            trials: opts.trials,
            radius: 1e-3,
            escape_radius: 1e-2,
            max_steps: 10_000,
            seed: rng.next_u64(),
        };
        if let RegimeReport::Escape { rho, fraction, .. } =
            autonomous_regime_probe(&a, &b, &target)?
        {
            rows.push(RegimeRow {
                case: "expansive",
                index: i,
                k: None,
                rho,
                measured: fraction,
                expected: 1.0,
                relative_error: 1.0 - fraction,
                pass: fraction >= 0.999,
            });
        }
    }
    if opts.ks.len() >= 2 {
        let k_max = *opts.ks.iter().max().unwrap_or(&1);
        for i in 0..opts.nets {
            let mut rng = Rng::substream(opts.seed, &[3, i as u64]);
            // The probe rescales A along ρ = 1 − 10^-k; only ratios matter here.
            let mut lambda = vec![0.5];
            lambda.extend((1..d).map(|_| rng.uniform_in(-0.45, 0.45)));
            let a = with_eigenvalues(&lambda, &mut rng)?;
            let b = rng.normal_vec(d, 1.0);
            let target = RegimeTarget::NearUnit {
                ks: opts.ks.clone(),
            };
            if let RegimeReport::NearUnit { points, .. } = autonomous_regime_probe(&a, &b, &target)?
            {
                // The proportionality constant is read off at the largest k.
                let c = points
                    .iter()
                    .find(|p| p.0 == k_max)
                    .map(|p| p.2 / 10f64.powi(k_max as i32))
                    .unwrap_or(1.0);
                for (k, rho_k, sens) in points {
                    let expected = c * 10f64.powi(k as i32);
                    let ratio = sens / expected;
                    rows.push(RegimeRow {
                        case: "near_unit",
                        index: i,
                        k: Some(k),
                        rho: rho_k,
                        measured: sens,
                        expected,
                        relative_error: (ratio - 1.0).abs(),
                        pass: (0.5..=2.0).contains(&ratio),
                    });
                }
            }
        }
    }
    Ok(rows)
}
