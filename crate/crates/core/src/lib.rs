//! Self-supervised image denoising from single noisy realizations.
//!
//! The training trick: given a noisy observation `y = x + n`, draw a second
//! synthetic sample `m` from the (known) noise model, form the doubly-noisy
//! `z = y + m`, and train a network to predict `y` from `z`. At inference
//! time an affine correction recovers the clean-image estimate from the
//! network output. Multiplicative Bernoulli masking is supported with the
//! analogous construction `z = m ⊙ y`.
//!
//! The crate bundles the noise samplers, the correction rules, a small
//! trainable convolutional denoiser with reverse-mode gradients and Adam,
//! a PSNR evaluation harness, and an oracle suite that validates the
//! closed-form identities behind the method against independent
//! linear-Gaussian posteriors and Monte-Carlo estimates.

pub mod correction;
pub mod eval;
pub mod figure;
pub mod io;
pub mod nn;
pub mod noise;
pub mod oracle;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;

pub use correction::{CorrectionKind, CorrectionRule, InferenceMode};
pub use eval::{psnr, EvalReport};
pub use noise::NoiseModel;
pub use rng::{StreamKind, StreamRng};
pub use tensor::{ImageTensor, Kernel2d};

/// Errors surfaced by every fallible operation in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error("invalid argument: {0}")]
    InvalidArg(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("noise kind mismatch: {0}")]
    KindMismatch(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("bad file format: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArg(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}
