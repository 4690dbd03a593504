//! Learning to split what an agent can control from what it cannot.
//!
//! A 24x24 pixel gridworld contains one agent-controlled object and zero or
//! more obstacles that move on their own. Everything here exists to train and
//! evaluate models that pull those two kinds of structure apart from raw
//! pixels, using nothing but interaction:
//!
//! - [`tape`] / [`kernels`] — a small dense-tensor core with reverse-mode
//!   differentiation, generic over the float type ([`Scalar`]).
//! - [`gridworld`] / [`dataset`] — the stochastic environment, its scenarios,
//!   and the on-disk transition dataset format.
//! - [`models`] — encoder/decoder stacks, per-latent action policies, the
//!   two-branch model, and the recurrent Q-network.
//! - [`objectives`] — reconstruction error, the action-selectivity score with
//!   its policy weighting, and the score-function policy gradient.
//! - [`training`] — the four training pipelines (plain autoencoder, selectivity
//!   model, two-branch from scratch, two-branch from a pretrained branch).
//! - [`evaluation`] — coordinate correlations, latent-neighbor distance curves,
//!   normalized precision matrices, policy tables, and decomposition scores.
//! - [`rl_task`] — the extrinsic-reward task on top of frozen encoders.
//!
//! Training runs in `f32`; gradient checks run the same code in `f64`.

pub mod checkpoint;
pub mod dataset;
pub mod evaluation;
pub mod gridworld;
pub mod kernels;
pub mod models;
pub mod objectives;
pub mod optim;
pub mod params;
pub mod report;
pub mod rl_task;
pub mod scalar;
pub mod svg;
pub mod tape;
pub mod tensor;
pub mod training;

pub use scalar::Scalar;
pub use tensor::Tensor;

/// Concrete aliases for the two supported precisions. Training and
/// checkpoints use the 32-bit variants; finite-difference gradient checks
/// instantiate the same generic code at 64 bits.
pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = tape::Tape<f32>;
pub type Tape64 = tape::Tape<f64>;
pub type ParameterStore32 = params::ParameterStore<f32>;
pub type ParameterStore64 = params::ParameterStore<f64>;

/// Error type shared across the crate.
///
/// The variants map onto process exit codes at the CLI boundary: `Config`
/// exits 1, the I/O and format variants exit 2.
#[derive(Debug)]
pub enum Error {
    /// Invalid configuration or arguments (bad flag combination, missing
    /// checkpoint for a pretrained run, budget not divisible, ...).
    Config(String),
    /// Underlying I/O failure with the path involved.
    Io(String, std::io::Error),
    /// A file existed but its contents were not what the format requires.
    Format(String),
    /// Tensor shape mismatch; carries both shapes.
    Shape { expected: String, got: String },
}

impl std::fmt::Display for Error {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Io(path, err) => write!(f, "io error: {path}: {err}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Shape { expected, got } => {
                write!(f, "shape mismatch: expected {expected}, got {got}")
            }
        }
    }
}

impl std::error::Error for Error {}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, err: std::io::Error) -> Self {
        Error::Io(path.as_ref().display().to_string(), err)
    }

    pub fn shape(expected: impl std::fmt::Debug, got: impl std::fmt::Debug) -> Self {
        Error::Shape {
            expected: format!("{expected:?}"),
            got: format!("{got:?}"),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
