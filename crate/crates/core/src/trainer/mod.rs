//! Progressive-loss training of looped nets on the prefix-sums task.
//!
//! Bits are embedded through a learned two-row table, the loop runs `N`
//! iterations without gradients and `K` with, and a per-token two-logit
//! readout is scored at each of the `K` supervised iterates. Gradients come
//! from the reverse pass in [`crate::netcore::LoopedNet::backward_step`].

mod data;
mod model;
mod optim;
mod progressive;
mod train;

use thiserror::Error;

use crate::linalg::LinalgError;
use crate::netcore::NetError;

pub use data::{
    gen_prefix_sums, gen_prefix_sums_with, load_dataset, read_dataset, write_dataset,
    ParityConvention, PrefixSumExample,
};
pub use model::{batch_loss, forward_backward, Gradients, LossReport, Model};
pub use optim::{AdamW, AdamWConfig, LrSchedule};
pub use progressive::progressive_sample;
pub use train::{
    evaluate, generate_data, records_csv, train, train_model, train_on, EpochRecord, EvalCurve,
    EvalPoint, Predictor, TrainConfig, TrainRun,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("non-finite value at iterate {iterate}")]
    NonFinite { iterate: usize },
    #[error("training diverged in epoch {epoch}, batch {batch}, iterate {iterate}")]
    Diverged {
        epoch: usize,
        batch: usize,
        iterate: usize,
        partial: Box<TrainRun>,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
