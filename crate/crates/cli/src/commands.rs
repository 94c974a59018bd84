use std::path::Path;

use anyhow::{Context, Result};
use looplab_core::dynamics::{
    classify_fixed_point, e_sensitivity, run_trajectory, Classification, ClassifyOptions,
    DynamicsError, Tolerances,
};
use looplab_core::linalg::Rng;
use looplab_core::netcore::{serialize, NetConfig, NormMode, RecallMode, StateMatrix};
use looplab_core::scalarlab::{
    anisotropy_sample, stability_grid, stability_svg, AnisotropyStats, GridSpec, Variant,
};
use looplab_core::trainer::{
    evaluate, gen_prefix_sums_with, generate_data, load_dataset, records_csv, train_on,
    write_dataset, AdamWConfig, LrSchedule, Model, TrainConfig, TrainError, TrainRun,
};
use rayon::prelude::*;

use crate::cli::{
    AnisotropyArgs, Bits, Command, EvalArgs, FixedPointArgs, GradLimitArgs, InitialIterate,
    JacobianCheckArgs, List, NetShape, RegimeArgs, StabilityMapArgs, TrainArgs,
};
use crate::experiments::{
    find_stable_cases, jacobian_trial, perturbation_agreement, regime_study, study_stable_case,
    NetRecipe, PerturbOptions, RegimeOptions, StudyOptions,
};
use crate::output::{csv, num, PendingFile};
use crate::UsageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// An invariant check failed; nothing is written.
    VerificationFailed,
    /// The run stopped early; what it produced is still written.
    Aborted,
}

#[derive(Debug)]
pub struct Outcome {
    pub files: Vec<PendingFile>,
    /// Summary printed to stdout.
    pub lines: Vec<String>,
    pub status: Status,
}

impl Outcome {
    fn new() -> Self {
        Self {
            files: Vec::new(),
            lines: Vec::new(),
            status: Status::Ok,
        }
    }

    fn file(&mut self, label: &str, path: &Option<impl AsRef<Path>>, bytes: impl Into<Vec<u8>>) {
        if let Some(p) = path {
            self.files.push(PendingFile::new(label, p.as_ref(), bytes));
        }
    }

    fn verify(&mut self, ok: bool) {
        if !ok {
            self.status = Status::VerificationFailed;
        }
    }
}

pub fn execute(cmd: Command) -> Result<Outcome> {
    match cmd {
        Command::FixedPoint(a) => fixed_point(&a),
        Command::JacobianCheck(a) => jacobian_check(&a),
        Command::GradLimit(a) => grad_limit(&a),
        Command::AutonomousRegimes(a) => regimes(&a),
        Command::StabilityMap(a) => stability_map(&a),
        Command::Anisotropy(a) => anisotropy(&a),
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    if threads == 0 {
        return Err(usage("--threads must be at least 1"));
    }
    Ok(rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()?)
}

fn recipe(recall: RecallMode, norm: NormMode, s: &NetShape) -> NetRecipe {
    NetRecipe {
        recall,
        norm,
        d: s.d,
        len: s.seq_len,
        hidden: s.hidden,
        bandwidth: s.bandwidth,
        heads: s.heads,
        recall_scale: s.recall_scale,
        sublayer_scale: s.sublayer_scale,
        jitter: s.jitter,
    }
}

fn fixed_point(a: &FixedPointArgs) -> Result<Outcome> {
    let (net, head) = match &a.net {
        Some(p) => serialize::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => {
            let seed = Rng::substream(a.seed, &[0]).next_u64();
            (recipe(a.recall, a.norm, &a.shape).build(seed)?, None)
        }
    };
    let (d, len) = (net.config().d, net.config().seq_len);
    let mut rng = Rng::substream(a.seed, &[1]);
    let x0 = match &a.bits {
        Some(Bits(bits)) => {
            let head = head.ok_or_else(|| usage("--bits needs a checkpoint with a head"))?;
            Model::new(net.clone(), head)?.embed(bits)
        }
        None => StateMatrix::random(d, len, 1.0, &mut rng),
    };
    let e = match a.e {
        InitialIterate::Zeros => StateMatrix::zeros(x0.d(), x0.len()),
        InitialIterate::Input => x0.clone(),
        InitialIterate::Gaussian => StateMatrix::random(x0.d(), x0.len(), 1.0, &mut rng),
    };
    let tr = run_trajectory(&net, &x0, &e, a.max_iters, &Tolerances::default())?;
    let mut out = Outcome::new();
    let mut report: Vec<(&str, String)> = vec![
        ("recall", net.config().recall.to_string()),
        ("norm", net.config().norm.to_string()),
        ("status", tr.status.as_str().to_string()),
        ("iterations", tr.iterations.to_string()),
        (
            "t_converged",
            tr.t_converged.map(|t| t.to_string()).unwrap_or_default(),
        ),
        (
            "period",
            tr.period.map(|t| t.to_string()).unwrap_or_default(),
        ),
        ("final_residual", num(tr.final_residual())),
    ];
    if tr.status == looplab_core::dynamics::TrajectoryStatus::Converged {
        let x_star = tr.final_state().clone();
        match classify_fixed_point(&net, &x_star, &x0, &ClassifyOptions::default()) {
            Ok(rep) => {
                report.push(("rho", num(rep.rho)));
                report.push(("m_rho", rep.m_rho.map(num).unwrap_or_default()));
                report.push(("classification", rep.classification.as_str().into()));
                let opts = PerturbOptions {
                    trials: a.perturb_trials,
                    radius: a.perturb_radius,
                    escape_radius: 10.0 * a.perturb_radius,
                    max_iters: a.max_iters,
                    ..PerturbOptions::default()
                };
                let agree = perturbation_agreement(
                    &net,
                    &x0,
                    &x_star,
                    rep.classification,
                    &opts,
                    &mut rng,
                )?;
                if let Some(k) = agree {
                    let frac = k as f64 / a.perturb_trials.max(1) as f64;
                    report.push(("perturb_agree", k.to_string()));
                    report.push(("perturb_trials", a.perturb_trials.to_string()));
                    out.verify(a.perturb_trials == 0 || frac >= a.min_agree);
                }
                if net.config().recall.has_recall()
                    && rep.classification == Classification::Attracting
                {
                    let s1 = e_sensitivity(&net, &x0, &e, 1)?;
                    let s300 = e_sensitivity(&net, &x0, &e, 300)?;
                    report.push(("e_sensitivity_1", num(s1)));
                    report.push(("e_sensitivity_300", num(s300)));
                }
            }
            Err(DynamicsError::Inconsistent { rho, m_rho }) => {
                report.push(("rho", num(rho)));
                report.push(("m_rho", num(m_rho)));
                out.verify(false);
            }
            Err(e) => return Err(e.into()),
        }
    }
    out.lines = report.iter().map(|(k, v)| format!("{k}: {v}")).collect();
    let rows = report.iter().map(|(k, v)| vec![k.to_string(), v.clone()]);
    out.file("report", &a.out, csv(&["quantity", "value"], rows));
    let trace = tr
        .residuals
        .iter()
        .enumerate()
        .map(|(t, r)| vec![(t + 1).to_string(), num(*r)]);
    out.file("trace", &a.trace, csv(&["t", "residual"], trace));
    Ok(out)
}

fn jacobian_check(a: &JacobianCheckArgs) -> Result<Outcome> {
    let List(recalls) = &a.recall;
    let List(norms) = &a.norm;
    let jobs: Vec<_> = recalls
        .iter()
        .flat_map(|&r| norms.iter().map(move |&n| (r, n)))
        .flat_map(|(r, n)| (0..a.trials).map(move |t| (r, n, t)))
        .collect();
    let pool = thread_pool(a.threads)?;
    let trials = pool.install(|| {
        jobs.par_iter()
            .map(|&(r, n, t)| jacobian_trial(r, n, a.d, a.seq_len, a.seed, t))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut out = Outcome::new();
    let worst = trials.iter().map(|t| t.max_error()).fold(0.0, f64::max);
    for &r in recalls {
        for &n in norms {
            let w = trials
                .iter()
                .filter(|t| t.recall == r && t.norm == n)
                .map(|t| t.max_error())
                .fold(0.0, f64::max);
            out.lines
                .push(format!("{r}/{n}: max relative error {w:.3e}"));
        }
    }
    let ok = worst <= a.tol;
    out.lines.push(format!(
        "max relative error {worst:.3e} over {} nets (tolerance {:.1e}): {}",
        trials.len(),
        a.tol,
        if ok { "pass" } else { "FAIL" }
    ));
    out.verify(ok);
    let rows = trials.iter().map(|t| {
        vec![
            t.recall.to_string(),
            t.norm.to_string(),
            t.trial.to_string(),
            num(t.err_state),
            num(t.err_input),
        ]
    });
    out.file(
        "errors",
        &a.out,
        csv(&["recall", "norm", "trial", "err_state", "err_input"], rows),
    );
    Ok(out)
}

fn grad_limit(a: &GradLimitArgs) -> Result<Outcome> {
    let List(recalls) = &a.recall;
    if recalls.contains(&RecallMode::Autonomous) {
        return Err(usage("grad-limit needs recall modes (external, internal)"));
    }
    let opts = StudyOptions {
        unroll_steps: a.steps,
        sens_steps: a.sens_steps,
        perturb: PerturbOptions {
            trials: a.perturb_trials,
            ..PerturbOptions::default()
        },
        ..StudyOptions::default()
    };
    let mut out = Outcome::new();
    let mut rows = Vec::new();
    let mut all_ok = true;
    for &recall in recalls {
        let r = recipe(recall, a.norm, &a.shape);
        let cases = find_stable_cases(&r, a.nets, a.rho_max, opts.perturb.max_iters, a.seed)?;
        let mut worst_gap: f64 = 0.0;
        let mut failed = 0;
        for (i, case) in cases.iter().enumerate() {
            let mut rng = Rng::substream(a.seed, &[10, recall as u64, i as u64]);
            let s = study_stable_case(case, &opts, &mut rng)?;
            let min_agree = (0.99 * a.perturb_trials as f64).ceil() as usize;
            let ok = s.gap <= s.gap_bound()
                && s.m_rho.is_none_or(|m| (m - s.rho).abs() <= 1e-8)
                && s.perturb_agree.is_some_and(|k| k >= min_agree)
                && s.sens_ratio() <= 1e-8
                && s.e_shift <= 1e-8;
            worst_gap = worst_gap.max(s.gap / s.gap_bound());
            failed += usize::from(!ok);
            rows.push(vec![
                recall.to_string(),
                i.to_string(),
                case.net_seed.to_string(),
                num(s.rho),
                s.m_rho.map(num).unwrap_or_default(),
                num(s.limit_norm),
                num(s.gap),
                num(s.gap_bound()),
                num(s.sens_ratio()),
                num(s.e_shift),
                s.perturb_agree.map(|k| k.to_string()).unwrap_or_default(),
                u8::from(ok).to_string(),
            ]);
        }
        all_ok &= failed == 0;
        out.lines.push(format!(
            "{recall}: {} nets, worst gap/bound {worst_gap:.3e}, {failed} failing",
            cases.len()
        ));
    }
    out.verify(all_ok);
    out.file(
        "nets",
        &a.out,
        csv(
            &[
                "recall",
                "index",
                "net_seed",
                "rho",
                "m_rho",
                "limit_norm",
                "gap",
                "gap_bound",
                "sens_ratio",
                "e_shift",
                "perturb_agree",
                "pass",
            ],
            rows,
        ),
    );
    Ok(out)
}

fn regimes(a: &RegimeArgs) -> Result<Outcome> {
    if a.d == 0 || a.horizon < 4 {
        return Err(usage("need d >= 1 and horizon >= 4"));
    }
    let opts = RegimeOptions {
        d: a.d,
        nets: a.nets,
        horizon: a.horizon,
        trials: a.trials,
        ks: a.ks.0.clone(),
        seed: a.seed,
    };
    let rows = regime_study(&opts)?;
    let mut out = Outcome::new();
    for case in ["contractive", "expansive", "near_unit"] {
        let sel: Vec<_> = rows.iter().filter(|r| r.case == case).collect();
        let worst = sel.iter().map(|r| r.relative_error).fold(0.0, f64::max);
        let failing = sel.iter().filter(|r| !r.pass).count();
        out.lines.push(format!(
            "{case}: {} rows, worst relative error {worst:.3e}, {failing} failing",
            sel.len()
        ));
    }
    out.verify(rows.iter().all(|r| r.pass));
    let cells = rows.iter().map(|r| {
        vec![
            r.case.to_string(),
            r.index.to_string(),
            r.k.map(|k| k.to_string()).unwrap_or_default(),
            num(r.rho),
            num(r.measured),
            num(r.expected),
            num(r.relative_error),
            u8::from(r.pass).to_string(),
        ]
    });
    out.file(
        "regimes",
        &a.out,
        csv(
            &[
                "case",
                "index",
                "k",
                "rho",
                "measured",
                "expected",
                "relative_error",
                "pass",
            ],
            cells,
        ),
    );
    Ok(out)
}

fn grid(range: (f64, f64), n: usize) -> GridSpec {
    GridSpec {
        jg_min: -range.0,
        jg_max: range.0,
        jh_min: -range.1,
        jh_max: range.1,
        nx: n,
        ny: n,
    }
}

fn stability_map(a: &StabilityMapArgs) -> Result<Outcome> {
    if a.grid == 0 || a.svg_grid == 0 {
        return Err(usage("grid sizes must be at least 1"));
    }
    let spec = grid(a.range, a.grid);
    let mut out = Outcome::new();
    let mut rows = Vec::new();
    for &variant in &a.variant.0 {
        let cells = stability_grid(variant, &spec);
        let stable = cells.iter().filter(|&&c| c).count();
        out.lines.push(format!(
            "{variant}: {stable} of {} cells stable",
            cells.len()
        ));
        for j in 0..spec.ny {
            for i in 0..spec.nx {
                let p = spec.point(i, j);
                rows.push(vec![
                    variant.to_string(),
                    i.to_string(),
                    j.to_string(),
                    num(p.jg),
                    num(p.jh),
                    u8::from(cells[j * spec.nx + i]).to_string(),
                ]);
            }
        }
    }
    out.file(
        "map",
        &a.out,
        csv(&["variant", "i", "j", "jg", "jh", "stable"], rows),
    );
    if a.svg.is_some() {
        let svg = stability_svg(&grid(a.range, a.svg_grid), &[]);
        out.file("svg", &a.svg, svg);
    }
    Ok(out)
}

fn anisotropy(a: &AnisotropyArgs) -> Result<Outcome> {
    if a.n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    if !(a.eps > 0.0) {
        return Err(usage("--eps must be positive"));
    }
    let pool = thread_pool(a.threads)?;
    let mut stats = Vec::new();
    for (si, &sigma) in a.sigmas.0.iter().enumerate() {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(usage(format!("sigma must be positive, got {sigma}")));
        }
        let samples = pool.install(|| {
            (0..a.n)
                .into_par_iter()
                .map(|k| anisotropy_sample(sigma, a.eps, a.seed, si, k))
                .collect::<Result<Vec<_>, _>>()
        })?;
        stats.push(AnisotropyStats::from_samples(sigma, &samples));
    }
    let mut out = Outcome::new();
    let mut rows = Vec::new();
    for s in &stats {
        for v in Variant::ALL {
            let m = s.variant(v);
            rows.push(vec![
                num(s.sigma),
                v.to_string(),
                s.n.to_string(),
                num(m.mean_log_range),
                num(m.se_log_range),
                num(m.median_log_range),
                num(m.mean_balance),
                num(m.se_balance),
                num(m.median_balance),
            ]);
        }
        out.lines.push(format!(
            "sigma {}: median log-range internal {:.3} external {:.3}; median balance internal {:.3} external {:.3}",
            s.sigma,
            s.internal.median_log_range,
            s.external.median_log_range,
            s.internal.median_balance,
            s.external.median_balance
        ));
    }
    out.file(
        "stats",
        &a.out,
        csv(
            &[
                "sigma",
                "variant",
                "n",
                "mean_log_range",
                "se_log_range",
                "median_log_range",
                "mean_balance",
                "se_balance",
                "median_balance",
            ],
            rows,
        ),
    );
    Ok(out)
}

fn train_config(a: &TrainArgs) -> TrainConfig {
    let mut c = TrainConfig::default();
    c.net = NetConfig::new(a.d, a.seq_len, a.recall, a.norm);
    c.net.mlp_hidden = a.hidden.unwrap_or(4 * a.d);
    c.net.mix_bandwidth = a.bandwidth;
    c.net.mix_heads = a.heads;
    c.t_max = a.t_max;
    c.lr = a.lr;
    c.schedule = LrSchedule {
        warmup_epochs: a.warmup,
        constant_until: a.constant_until,
        cooldown_factor: a.cooldown,
    };
    c.batch_size = a.batch;
    c.epochs = a.epochs;
    c.clip_norm = a.clip;
    c.adam = AdamWConfig {
        weight_decay: a.weight_decay,
        ..AdamWConfig::default()
    };
    c.seed = a.seed;
    c.train_bits = a.train_bits;
    c.n_train = a.n_train;
    c.eval_bits = a.eval_bits.0.clone();
    c.n_eval = a.n_eval;
    c.eval_iters = a.eval_iters.0.clone();
    c.convention = a.convention;
    c
}

fn curves_csv(run: &TrainRun) -> String {
    let rows = run.curves.iter().flat_map(|c| {
        c.points.iter().map(move |p| {
            vec![
                c.bits.to_string(),
                p.iters.to_string(),
                num(p.bit_acc),
                num(p.seq_acc),
            ]
        })
    });
    csv(&["bits", "iters", "bit_acc", "seq_acc"], rows)
}

fn checkpoint_bytes(model: &Model) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    serialize::write_net(&mut buf, &model.net, Some(&model.head))?;
    Ok(buf)
}

fn train(a: &TrainArgs) -> Result<Outcome> {
    let config = train_config(a);
    config.validate()?;
    let (generated, monitor) = generate_data(&config);
    let mut out = Outcome::new();
    let train_data = match &a.dataset {
        Some(p) => load_dataset(p).with_context(|| format!("loading {}", p.display()))?,
        None => {
            if a.write_dataset.is_some() {
                let mut buf = Vec::new();
                write_dataset(&mut buf, &generated)?;
                out.file("dataset", &a.write_dataset, buf);
            }
            generated
        }
    };
    let run = match train_on(&config, &train_data, &monitor) {
        Ok(run) => run,
        Err(TrainError::Diverged {
            epoch,
            batch,
            iterate,
            partial,
        }) => {
            out.lines.push(format!(
                "diverged in epoch {epoch}, batch {batch}, iterate {iterate}"
            ));
            if let Some(p) = &a.out {
                let log = PendingFile::new("log", p, records_csv(&partial.records));
                out.files.insert(0, log);
            }
            out.status = Status::Aborted;
            return Ok(out);
        }
        Err(e) => return Err(e.into()),
    };
    for r in &run.records {
        out.lines.push(format!(
            "epoch {:>3}  loss {:.5}  bit_acc {:.4}  seq_acc {:.4}  rho_wx {}  lr {:.2e}",
            r.epoch,
            r.loss,
            r.bit_acc,
            r.seq_acc,
            r.rho_wx
                .map(|v| format!("{v:.4}"))
                .unwrap_or_else(|| "-".into()),
            r.lr
        ));
    }
    for c in &run.curves {
        for p in &c.points {
            out.lines.push(format!(
                "{} bits, {} iterations: bit_acc {:.4} seq_acc {:.4}",
                c.bits, p.iters, p.bit_acc, p.seq_acc
            ));
        }
    }
    let mut files = vec![];
    if let Some(p) = &a.out {
        files.push(PendingFile::new("log", p, records_csv(&run.records)));
    }
    if let Some(p) = &a.curves {
        files.push(PendingFile::new("curves", p, curves_csv(&run)));
    }
    if let Some(p) = &a.checkpoint {
        files.push(PendingFile::new(
            "checkpoint",
            p,
            checkpoint_bytes(&run.model)?,
        ));
    }
    files.append(&mut out.files);
    out.files = files;
    Ok(out)
}

fn eval(a: &EvalArgs) -> Result<Outcome> {
    let (net, head) = serialize::load(&a.checkpoint)
        .with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let head = head.ok_or_else(|| usage("checkpoint has no embedding/readout head"))?;
    let model = Model::new(net, head)?;
    let sets: Vec<(usize, Vec<_>)> = match &a.dataset {
        Some(p) => {
            let data = load_dataset(p).with_context(|| format!("loading {}", p.display()))?;
            let bits = data.first().map(|e| e.len()).unwrap_or(0);
            vec![(bits, data)]
        }
        None => a
            .bits
            .0
            .iter()
            .enumerate()
            .map(|(i, &bits)| {
                if bits == 0 {
                    return Err(usage("--bits entries must be positive"));
                }
                let seed = Rng::substream(a.seed, &[i as u64]).next_u64();
                Ok((bits, gen_prefix_sums_with(a.n, bits, seed, a.convention)))
            })
            .collect::<Result<_>>()?,
    };
    let mut out = Outcome::new();
    let mut rows = Vec::new();
    for (bits, data) in &sets {
        for p in evaluate(&model, data, &a.iters.0)? {
            out.lines.push(format!(
                "{bits} bits, {} iterations: bit_acc {:.4} seq_acc {:.4}",
                p.iters, p.bit_acc, p.seq_acc
            ));
            rows.push(vec![
                bits.to_string(),
                p.iters.to_string(),
                num(p.bit_acc),
                num(p.seq_acc),
            ]);
        }
    }
    out.file(
        "curves",
        &a.out,
        csv(&["bits", "iters", "bit_acc", "seq_acc"], rows),
    );
    Ok(out)
}
