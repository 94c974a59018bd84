use std::fmt::Write as _;
use std::io::Write;

use crate::linalg::{spectral_radius, Rng};
use crate::netcore::{MixBandwidth, NetConfig, NetError, NormMode, RecallMode};

use super::data::{gen_prefix_sums_with, ParityConvention, PrefixSumExample};
use super::model::{forward_backward, Model};
use super::optim::{AdamW, AdamWConfig, LrSchedule};
use super::progressive::progressive_sample;
use super::TrainError;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub net: NetConfig,
    /// Loop budget `T`; training iterates at most `T − 1` times.
    pub t_max: usize,
    pub lr: f64,
    pub schedule: LrSchedule,
    pub batch_size: usize,
    pub epochs: usize,
    pub clip_norm: f64,
    pub adam: AdamWConfig,
    pub seed: u64,
    pub train_bits: usize,
    pub n_train: usize,
    /// Held-out lengths for the final iteration-count curves.
    pub eval_bits: Vec<usize>,
    pub n_eval: usize,
    /// Iteration counts for the final curves.
    pub eval_iters: Vec<usize>,
    pub convention: ParityConvention,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let mut net = NetConfig::new(32, 16, RecallMode::External, NormMode::Post);
        net.mix_bandwidth = MixBandwidth::Banded(5);
        net.mix_heads = 4;
        Self {
            net,
            t_max: 8,
            lr: 1e-3,
            schedule: LrSchedule::default(),
            batch_size: 128,
            epochs: 40,
            clip_norm: 1.0,
            adam: AdamWConfig::default(),
            seed: 0,
            train_bits: 16,
            n_train: 4096,
            eval_bits: vec![16, 32],
            n_eval: 512,
            eval_iters: vec![8, 16, 32, 64],
            convention: ParityConvention::Inclusive,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.net.validate()?;
        let fail = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.t_max < 2 {
            return fail("T_max must be at least 2");
        }
        if !(self.clip_norm > 0.0) {
            return fail("clip_norm must be positive");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return fail("learning rate must be finite and non-negative");
        }
        if self.batch_size == 0 || self.n_train == 0 || self.n_eval == 0 || self.train_bits == 0 {
            return fail("batch_size, n_train, n_eval and train_bits must be positive");
        }
        if self.eval_iters.is_empty() || self.eval_bits.contains(&0) {
            return fail("eval_iters must be nonempty and eval_bits positive");
        }
        if !(self.schedule.cooldown_factor > 0.0) {
            return fail("cooldown_factor must be positive");
        }
        if matches!(self.net.mix_bandwidth, MixBandwidth::Full)
            && (self.net.seq_len != self.train_bits
                || self.eval_bits.iter().any(|&b| b != self.train_bits))
        {
            return fail("full token mixing requires every length to equal the configured L");
        }
        Ok(())
    }

    /// Iteration count used for the per-epoch held-out metrics.
    pub fn monitor_iters(&self) -> usize {
        self.t_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch's batches.
    pub loss: f64,
    pub bit_acc: f64,
    pub seq_acc: f64,
    /// `ρ(W_x)` at the end of the epoch; `None` without recall.
    pub rho_wx: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalPoint {
    pub iters: usize,
    pub bit_acc: f64,
    pub seq_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalCurve {
    pub bits: usize,
    pub points: Vec<EvalPoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub records: Vec<EpochRecord>,
    pub model: Model,
    pub curves: Vec<EvalCurve>,
}

impl TrainRun {
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(records_csv(&self.records).as_bytes())
    }
}

/// Log text with header `epoch,loss,bit_acc,seq_acc,rho_wx,lr`. Floats use
/// 17 significant digits; a missing `ρ(W_x)` is left empty.
pub fn records_csv(records: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,loss,bit_acc,seq_acc,rho_wx,lr\n");
    for r in records {
        let rho = r.rho_wx.map(|v| format!("{v:.16e}")).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{:.16e},{:.16e},{:.16e},{},{:.16e}",
            r.epoch, r.loss, r.bit_acc, r.seq_acc, rho, r.lr
        );
    }
    s
}

/// Anything that maps input bits to predicted target bits after a given
/// number of loop iterations.
pub trait Predictor {
    /// Predictions after each of `iter_counts` iterations, in the given order.
    fn predict_at(&self, bits: &[u8], iter_counts: &[usize]) -> Result<Vec<Vec<u8>>, TrainError>;
}

impl Predictor for Model {
    fn predict_at(&self, bits: &[u8], iter_counts: &[usize]) -> Result<Vec<Vec<u8>>, TrainError> {
        let max = iter_counts.iter().copied().max().unwrap_or(0);
        let x0 = self.embed(bits);
        let mut x = self.initial_iterate(&x0);
        let mut out = vec![Vec::new(); iter_counts.len()];
        for t in 0..=max {
            if t > 0 {
                x = self.net.step(&x, &x0).map_err(|e| match e {
                    NetError::NumericOverflow => TrainError::NonFinite { iterate: t },
                    other => TrainError::Net(other),
                })?;
            }
            for (slot, _) in out.iter_mut().zip(iter_counts).filter(|(_, &c)| c == t) {
                *slot = self.readout_bits(&x);
            }
        }
        Ok(out)
    }
}

/// Bitwise and whole-sequence accuracy after each of `iter_counts` loop
/// iterations.
pub fn evaluate(
    model: &impl Predictor,
    dataset: &[PrefixSumExample],
    iter_counts: &[usize],
) -> Result<Vec<EvalPoint>, TrainError> {
    if iter_counts.is_empty() {
        return Err(TrainError::Precondition("iter_counts is empty".into()));
    }
    let mut bits_ok = vec![0usize; iter_counts.len()];
    let mut seqs_ok = vec![0usize; iter_counts.len()];
    let mut total_bits = 0usize;
    for ex in dataset {
        total_bits += ex.len();
        let preds = model.predict_at(&ex.input_bits, iter_counts)?;
        for (i, pred) in preds.iter().enumerate() {
            let correct = pred
                .iter()
                .zip(&ex.target_bits)
                .filter(|(a, b)| a == b)
                .count();
            bits_ok[i] += correct;
            seqs_ok[i] += usize::from(correct == ex.len());
        }
    }
    let n = dataset.len().max(1) as f64;
    let nb = total_bits.max(1) as f64;
    Ok(iter_counts
        .iter()
        .enumerate()
        .map(|(i, &iters)| EvalPoint {
            iters,
            bit_acc: bits_ok[i] as f64 / nb,
            seq_acc: seqs_ok[i] as f64 / n,
        })
        .collect())
}

fn rho_wx(model: &Model) -> Result<Option<f64>, TrainError> {
    match &model.net.params().recall {
        Some(r) => Ok(Some(spectral_radius(&r.w_x, 1e-12)?)),
        None => Ok(None),
    }
}

fn data_seed(seed: u64, stream: u64) -> u64 {
    Rng::substream(seed, &[stream]).next_u64()
}

/// The training set (`n_train` strings of `train_bits` bits) and the
/// per-epoch monitor set (`n_eval` strings) that [`train`] draws for a seed.
pub fn generate_data(config: &TrainConfig) -> (Vec<PrefixSumExample>, Vec<PrefixSumExample>) {
    let train_data = gen_prefix_sums_with(
        config.n_train,
        config.train_bits,
        data_seed(config.seed, 0),
        config.convention,
    );
    let monitor = gen_prefix_sums_with(
        config.n_eval,
        config.train_bits,
        data_seed(config.seed, 1),
        config.convention,
    );
    (train_data, monitor)
}

/// Trains on freshly generated data; held-out curves use `n_eval` new
/// strings per evaluation length.
pub fn train(config: &TrainConfig) -> Result<TrainRun, TrainError> {
    config.validate()?;
    let (train_data, monitor) = generate_data(config);
    train_on(config, &train_data, &monitor)
}

/// Trains on the given data; `monitor` supplies the per-epoch held-out metrics.
pub fn train_on(
    config: &TrainConfig,
    train_data: &[PrefixSumExample],
    monitor: &[PrefixSumExample],
) -> Result<TrainRun, TrainError> {
    config.validate()?;
    if train_data.is_empty() || monitor.is_empty() {
        return Err(TrainError::Precondition(
            "training and monitor sets must be nonempty".into(),
        ));
    }
    let mut init_rng = Rng::substream(config.seed, &[2]);
    let model = Model::random(config.net.clone(), &mut init_rng)?;
    train_model(config, model, train_data, monitor)
}

/// Trains an existing model in place of a fresh initialisation.
pub fn train_model(
    config: &TrainConfig,
    mut model: Model,
    train_data: &[PrefixSumExample],
    monitor: &[PrefixSumExample],
) -> Result<TrainRun, TrainError> {
    let mut opt = AdamW::new(config.adam, model.num_params());
    let mut records = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    for epoch in 0..config.epochs {
        let lr = config.schedule.lr_at(config.lr, epoch);
        let mut rng = Rng::substream(config.seed, &[3, epoch as u64]);
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<PrefixSumExample> =
                chunk.iter().map(|&i| train_data[i].clone()).collect();
            let (n, k) = progressive_sample(config.t_max, &mut rng)?;
            let (loss, mut grads) = match forward_backward(&model, &batch, n, k) {
                Ok(v) => v,
                Err(TrainError::NonFinite { iterate }) => {
                    return Err(TrainError::Diverged {
                        epoch,
                        batch: b,
                        iterate,
                        partial: Box::new(TrainRun {
                            records,
                            model,
                            curves: Vec::new(),
                        }),
                    })
                }
                Err(e) => return Err(e),
            };
            grads.clip(config.clip_norm);
            opt.update(&mut model, &grads, lr);
            loss_sum += loss;
            batches += 1;
        }
        let acc = evaluate(&model, monitor, &[config.monitor_iters()]);
        let (bit_acc, seq_acc) = match acc {
            Ok(p) => (p[0].bit_acc, p[0].seq_acc),
            Err(TrainError::NonFinite { .. }) => (f64::NAN, f64::NAN),
            Err(e) => return Err(e),
        };
        let rho = rho_wx(&model).unwrap_or(Some(f64::NAN));
        records.push(EpochRecord {
            epoch,
            loss: loss_sum / batches as f64,
            bit_acc,
            seq_acc,
            rho_wx: rho,
            lr,
        });
    }
    let mut curves = Vec::with_capacity(config.eval_bits.len());
    for (i, &bits) in config.eval_bits.iter().enumerate() {
        let data = gen_prefix_sums_with(
            config.n_eval,
            bits,
            data_seed(config.seed, 10 + i as u64),
            config.convention,
        );
        let points = match evaluate(&model, &data, &config.eval_iters) {
            Ok(p) => p,
            Err(TrainError::NonFinite { .. }) => config
                .eval_iters
                .iter()
                .map(|&iters| EvalPoint {
                    iters,
                    bit_acc: f64::NAN,
                    seq_acc: f64::NAN,
                })
                .collect(),
            Err(e) => return Err(e),
        };
        curves.push(EvalCurve { bits, points });
    }
    Ok(TrainRun {
        records,
        model,
        curves,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.t_max = 1;
        assert!(c.validate().is_err());
        c.t_max = 4;
        c.clip_norm = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn csv_header_and_missing_rho() {
        let r = EpochRecord {
            epoch: 0,
            loss: 0.5,
            bit_acc: 1.0,
            seq_acc: 1.0,
            rho_wx: None,
            lr: 1e-3,
        };
        let s = records_csv(&[r]);
        let mut lines = s.lines();
        assert_eq!(lines.next(), Some("epoch,loss,bit_acc,seq_acc,rho_wx,lr"));
        assert_eq!(lines.next().unwrap().split(',').nth(4), Some(""));
    }
}
