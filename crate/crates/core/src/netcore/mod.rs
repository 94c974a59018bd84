//! Looped-network building blocks, the three recurrences under five
//! normalisation placements, and their analytic step Jacobians.
//!
//! With recall `g(x, x0) = W_x x + W_0 x0`, token mixing `h1` and a
//! token-wise GELU MLP `h2`, one step is
//!
//! ```text
//! autonomous: z = site1(x, x),        x' = site2(z, z)
//! external:   z = site1(g, g),        x' = site2(z, z),       g = g(x, x0)
//! internal:   z = site1(x, g(x, x0)), x' = site2(z, g(z, x0))
//! ```
//!
//! where `site_k(s, u)` combines the residual stream `s` with the sublayer
//! applied to `u` according to the norm mode:
//!
//! | mode | site output |
//! |------|-------------|
//! | none | `s + h(u)` |
//! | pre  | `s + h(N(u))` |
//! | post | `N(s + h(u))` |
//! | peri | `s + N'(h(N(u)))` |
//! | gru  | `GRU(s, h(u))` |

mod config;
pub mod layers;
mod net;
mod params;
pub mod serialize;
mod state;

use thiserror::Error;

pub use config::{MixBandwidth, NetConfig, NormMode, RecallMode, DEFAULT_NORM_EPS};
pub use layers::{gelu, gelu_grad, rms_norm};
pub use net::{LoopedNet, StepJacobians, StepTrace};
pub use params::{
    GruParams, InitScales, IoHead, MixHead, MlpParams, NetParams, RecallParams, SiteParams,
};
pub use state::StateMatrix;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("step produced non-finite values")]
    NumericOverflow,
    #[error("bad parameter file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Linalg(#[from] crate::linalg::LinalgError),
}
