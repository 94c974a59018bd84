use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use looplab_core::netcore::{MixBandwidth, NormMode, RecallMode};
use looplab_core::scalarlab::Variant;
use looplab_core::trainer::ParityConvention;

/// Deterministic experiments on looped networks.
#[derive(Debug, Parser)]
#[command(name = "looplab", version)]
pub struct Cli {
    /// Flat `key=value` file of flag values; command-line flags take precedence
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Iterate one net to a fixed point, classify it and probe its stability
    FixedPoint(FixedPointArgs),
    /// Compare analytic step Jacobians with central finite differences
    JacobianCheck(JacobianCheckArgs),
    /// Unrolled input gradients against the fixed-point limit on stable nets
    GradLimit(GradLimitArgs),
    /// Contractive, expansive and near-unit probes of linear autonomous maps
    AutonomousRegimes(RegimeArgs),
    /// Classify a grid of scalar (jg, jh) points for both recall variants
    StabilityMap(StabilityMapArgs),
    /// Anisotropy of Gaussian points projected onto the stable regions
    Anisotropy(AnisotropyArgs),
    /// Train a looped net on prefix sums with the progressive loss
    Train(TrainArgs),
    /// Accuracy of a trained checkpoint against loop iteration count
    Eval(EvalArgs),
}

/// Comma-separated values given as a single flag.
#[derive(Debug, Clone, PartialEq)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T>
where
    T::Err: Display,
{
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let items = s
            .split(',')
            .map(|p| p.trim().parse::<T>().map_err(|e| format!("`{p}`: {e}")))
            .collect::<Result<Vec<_>, _>>()?;
        if items.is_empty() {
            return Err("empty list".into());
        }
        Ok(Self(items))
    }
}

fn list_or_all<T: FromStr + Copy>(s: &str, all: &[T]) -> Result<List<T>, String>
where
    T::Err: Display,
{
    if s == "all" {
        Ok(List(all.to_vec()))
    } else {
        s.parse()
    }
}

fn recall_list(s: &str) -> Result<List<RecallMode>, String> {
    list_or_all(s, &RecallMode::ALL)
}

fn norm_list(s: &str) -> Result<List<NormMode>, String> {
    list_or_all(s, &NormMode::ALL)
}

fn variant_list(s: &str) -> Result<List<Variant>, String> {
    match s {
        "both" => Ok(List(Variant::ALL.to_vec())),
        _ => s
            .parse::<Variant>()
            .map(|v| List(vec![v]))
            .map_err(|e| e.to_string()),
    }
}

fn convention(s: &str) -> Result<ParityConvention, String> {
    match s {
        "inclusive" => Ok(ParityConvention::Inclusive),
        "exclusive" => Ok(ParityConvention::Exclusive),
        _ => Err(format!("unknown convention `{s}` (inclusive|exclusive)")),
    }
}

fn pair(s: &str) -> Result<(f64, f64), String> {
    let List(v) = s.parse::<List<f64>>()?;
    match v[..] {
        [a, b] if a > 0.0 && b > 0.0 => Ok((a, b)),
        _ => Err("expected two positive numbers `jg,jh`".into()),
    }
}

/// A string of `0`/`1` characters.
#[derive(Debug, Clone, PartialEq)]
pub struct Bits(pub Vec<u8>);

impl FromStr for Bits {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                _ => Err(format!("bad bit `{c}`")),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Self)
    }
}

/// How the loop's initial iterate `e` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum InitialIterate {
    Zeros,
    Input,
    Gaussian,
}

/// Shape and initialisation of randomly drawn nets.
#[derive(Debug, Clone, Args)]
pub struct NetShape {
    /// Model width d
    #[arg(long, default_value_t = 4)]
    pub d: usize,
    /// Sequence length L
    #[arg(long = "L", default_value_t = 3)]
    pub seq_len: usize,
    /// MLP hidden width (default 2d)
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Token-mixing reach: a band half-width or `full`
    #[arg(long, default_value = "1")]
    pub bandwidth: MixBandwidth,
    /// Token-mixing heads
    #[arg(long, default_value_t = 1)]
    pub heads: usize,
    /// Scale of the orthogonal W_x and W_0
    #[arg(long, default_value_t = 0.5)]
    pub recall_scale: f64,
    /// Multiplier on the fan-in sublayer initialisation
    #[arg(long, default_value_t = 0.3)]
    pub sublayer_scale: f64,
    /// Gaussian noise added to every parameter
    #[arg(long, default_value_t = 0.0)]
    pub jitter: f64,
}

#[derive(Debug, Clone, Args)]
pub struct FixedPointArgs {
    #[arg(long, default_value = "external")]
    pub recall: RecallMode,
    #[arg(long, default_value = "none")]
    pub norm: NormMode,
    #[command(flatten)]
    pub shape: NetShape,
    /// Load the net from a checkpoint instead of drawing one
    #[arg(long, value_name = "FILE")]
    pub net: Option<PathBuf>,
    /// Input bits embedded through the checkpoint's head (default: Gaussian x0)
    #[arg(long)]
    pub bits: Option<Bits>,
    /// Initial iterate
    #[arg(long, value_enum, default_value = "zeros")]
    pub e: InitialIterate,
    #[arg(long, default_value_t = 5000)]
    pub max_iters: usize,
    /// Perturbations of the fixed point checked against its classification
    #[arg(long, default_value_t = 100)]
    pub perturb_trials: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub perturb_radius: f64,
    /// Smallest fraction of perturbations that must match the classification
    #[arg(long, default_value_t = 0.99)]
    pub min_agree: f64,
    /// Seed for every random draw
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report CSV
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Residual trace CSV
    #[arg(long, value_name = "FILE")]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct JacobianCheckArgs {
    /// Recall modes, comma-separated or `all`
    #[arg(long, default_value = "all", value_parser = recall_list)]
    pub recall: List<RecallMode>,
    /// Norm modes, comma-separated or `all`
    #[arg(long, default_value = "all", value_parser = norm_list)]
    pub norm: List<NormMode>,
    #[arg(long, default_value_t = 6)]
    pub d: usize,
    #[arg(long = "L", default_value_t = 3)]
    pub seq_len: usize,
    /// Random nets per (recall, norm) pair
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    /// Largest accepted relative error
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    /// Seed for every random draw
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; results do not depend on it
    #[arg(long, env = "LOOPLAB_THREADS", default_value_t = 1)]
    pub threads: usize,
    /// Output CSV
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GradLimitArgs {
    /// Recall modes, comma-separated
    #[arg(long, default_value = "external,internal", value_parser = recall_list)]
    pub recall: List<RecallMode>,
    #[arg(long, default_value = "none")]
    pub norm: NormMode,
    #[command(flatten)]
    pub shape: NetShape,
    /// Stable nets per recall mode
    #[arg(long, default_value_t = 10)]
    pub nets: usize,
    /// Largest accepted spectral radius at the fixed point
    #[arg(long, default_value_t = 0.9)]
    pub rho_max: f64,
    /// Unrolled steps compared with the limit
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    /// Horizon of the initial-iterate sensitivity
    #[arg(long, default_value_t = 300)]
    pub sens_steps: usize,
    #[arg(long, default_value_t = 100)]
    pub perturb_trials: usize,
    /// Seed for every random draw
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RegimeArgs {
    #[arg(long, default_value_t = 4)]
    pub d: usize,
    /// Random matrices per regime
    #[arg(long, default_value_t = 20)]
    pub nets: usize,
    /// Power horizon of the contractive decay fit
    #[arg(long, default_value_t = 400)]
    pub horizon: usize,
    /// Perturbations per expansive matrix
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    /// Exponents k of the near-unit path ρ = 1 − 10^-k
    #[arg(long, default_value = "1,2,3,4,5,6")]
    pub ks: List<u32>,
    /// Seed for every random draw
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct StabilityMapArgs {
    /// `internal`, `external` or `both`
    #[arg(long, default_value = "both", value_parser = variant_list)]
    pub variant: List<Variant>,
    /// Cells per axis
    #[arg(long, default_value_t = 400)]
    pub grid: usize,
    /// Half-widths `jg,jh` of the plotted window
    #[arg(long, default_value = "10,6", value_parser = pair)]
    pub range: (f64, f64),
    /// Output CSV
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Two-panel SVG rendering
    #[arg(long, value_name = "FILE")]
    pub svg: Option<PathBuf>,
    /// Cells per axis in the SVG
    #[arg(long, default_value_t = 160)]
    pub svg_grid: usize,
}

#[derive(Debug, Clone, Args)]
pub struct AnisotropyArgs {
    /// Standard deviations of the sampled points
    #[arg(long, default_value = "0.5,1,2,4")]
    pub sigmas: List<f64>,
    /// Points per standard deviation
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    /// Floor inside the logarithms
    #[arg(long, default_value_t = 1e-8)]
    pub eps: f64,
    /// Seed for every random draw
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; results do not depend on it
    #[arg(long, env = "LOOPLAB_THREADS", default_value_t = 1)]
    pub threads: usize,
    /// Output CSV
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long, default_value = "external")]
    pub recall: RecallMode,
    #[arg(long, default_value = "post")]
    pub norm: NormMode,
    #[arg(long, default_value_t = 32)]
    pub d: usize,
    #[arg(long = "L", default_value_t = 16)]
    pub seq_len: usize,
    /// MLP hidden width (default 4d)
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long, default_value = "5")]
    pub bandwidth: MixBandwidth,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    /// Loop budget T
    #[arg(long, default_value_t = 8)]
    pub t_max: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 4)]
    pub warmup: usize,
    /// First epoch of the cooled-down learning rate
    #[arg(long, default_value_t = 24)]
    pub constant_until: usize,
    /// Learning-rate divisor after `constant-until`
    #[arg(long, default_value_t = 10.0)]
    pub cooldown: f64,
    #[arg(long, default_value_t = 128)]
    pub batch: usize,
    #[arg(long, default_value_t = 40)]
    pub epochs: usize,
    /// Global gradient-norm clip
    #[arg(long, default_value_t = 1.0)]
    pub clip: f64,
    #[arg(long, default_value_t = 0.01)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 16)]
    pub train_bits: usize,
    #[arg(long, default_value_t = 4096)]
    pub n_train: usize,
    /// Held-out lengths of the final curves
    #[arg(long, default_value = "16,32")]
    pub eval_bits: List<usize>,
    #[arg(long, default_value_t = 512)]
    pub n_eval: usize,
    /// Iteration counts of the final curves
    #[arg(long, default_value = "8,16,32,64")]
    pub eval_iters: List<usize>,
    /// Target bit k includes input bit k (`inclusive`) or not (`exclusive`)
    #[arg(long, default_value = "inclusive", value_parser = convention)]
    pub convention: ParityConvention,
    /// Train on this dataset instead of generated strings
    #[arg(long, value_name = "FILE")]
    pub dataset: Option<PathBuf>,
    /// Write the generated training set
    #[arg(long, value_name = "FILE")]
    pub write_dataset: Option<PathBuf>,
    /// Seed for every random draw
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-epoch log CSV
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Trained net and head
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Accuracy-against-iterations CSV
    #[arg(long, value_name = "FILE")]
    pub curves: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Checkpoint written by `train`
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Evaluate on this dataset instead of generated strings
    #[arg(long, value_name = "FILE")]
    pub dataset: Option<PathBuf>,
    /// Lengths of generated strings
    #[arg(long, default_value = "16,32")]
    pub bits: List<usize>,
    /// Generated strings per length
    #[arg(long, default_value_t = 512)]
    pub n: usize,
    #[arg(long, default_value = "8,16,32,64")]
    pub iters: List<usize>,
    #[arg(long, default_value = "inclusive", value_parser = convention)]
    pub convention: ParityConvention,
    /// Seed for every random draw
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}
