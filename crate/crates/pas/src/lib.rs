//! Backpropagation path search for transfer-based adversarial attacks.
//!
//! This crate rewires the *backward* pass of a small CNN through weighted skip
//! paths while leaving the forward pass untouched, then searches over those
//! path weights for the configuration whose adversarial examples transfer best
//! to unseen victim models.
//!
//! The pieces, bottom up:
//!
//! - [`tensor`] / [`conv`] — dense NCHW tensors and the exact forward/backward
//!   primitives (convolution, ReLU, linear head, pooling, softmax
//!   cross-entropy). Generic over `f32`/`f64`; `f64` exists for gradient
//!   verification.
//! - [`reparam`] — the skip-path rewirings: `SkipConv` decomposes a kernel
//!   into a skip kernel plus residual kernel, `LinReLU` blends the sparse ReLU
//!   gradient with a linear one, `SkipGrad` decays residual-branch gradients.
//!   A [`reparam::PathConfig`] assigns one decay weight γ ∈ [0,1] per site.
//! - [`model`] — desk-scale architectures (`plain-cnn`, `mini-resnet`), a
//!   taped forward pass, path-rewired and standard backward passes, SGD
//!   training and checkpointing.
//! - [`attack`] — FGSM / I-FGSM under an L∞ budget, with optional momentum
//!   accumulation and diverse-input resizing, parameterized by a path.
//! - [`search`] — TPE sampling plus Hyperband resource allocation over path
//!   configurations, scored by one-step transfer rate against a validation
//!   model, with a chi-square significance test for comparing paths.
//! - [`eval`] — transfer matrices across victim models, integrated-gradients
//!   attribution through a chosen path, and γ-vs-depth reports.
//! - [`data`] — IDX dataset ingestion, deterministic splits, and a synthetic
//!   pattern dataset for self-contained runs.
//!
//! Start with the runnable examples (`cargo run --release --example
//! end_to_end` walks the whole pipeline) or the `pas` binary, which exposes
//! the same steps as subcommands.

pub mod attack;
pub mod cli;
pub mod container;
pub mod conv;
pub mod data;
pub mod eval;
pub mod model;
pub mod reparam;
pub mod search;
pub mod tensor;

/// Errors shared across the crate.
///
/// The CLI maps these onto its exit-code contract: anything configuration- or
/// format-shaped exits 2, numerical failures (NaN detected mid-pass) exit 3.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument violated a documented precondition (shape mismatch,
    /// out-of-range value, missing path entry, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A structurally valid request the implementation deliberately does not
    /// support (e.g. even-sized skip kernels have no unambiguous center).
    #[error("unsupported configuration: {0}")]
    UnsupportedConfiguration(String),

    /// A persisted artifact could not be decoded. `offset` is the byte
    /// position at which decoding failed.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// Inconsistent run configuration (architecture mismatch, missing inputs,
    /// refusing to overwrite outputs, ...).
    #[error("configuration error: {0}")]
    Configuration(String),

    /// A forward or backward pass produced a non-finite value.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
