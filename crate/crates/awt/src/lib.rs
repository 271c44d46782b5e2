//! Unpaired bidirectional translation between 6-channel inertial signals and
//! 3-channel pen trajectories.
//!
//! The crate is organized bottom-up:
//!
//! * [`numerics`] — a minimal reverse-mode differentiable kernel for 1-D
//!   sequence models (convolutions, a GRU, affine layers, the losses, Adam,
//!   and a finite-difference gradient checker). Everything is `f64` and every
//!   operation has an explicit, hand-written backward pass.
//! * [`data`] — the on-disk sample format, preprocessing, and a synthetic
//!   generator that produces paired trajectory/inertial corpora from a
//!   kinematic oracle (the pairing is withheld from training).
//! * [`model`] — the two encoder/decoder pairs, shared latent classifier and
//!   discriminator, plus checkpoint (de)serialization.
//! * [`training`] — batching, masking, the four optimization steps
//!   (reconstruction, classification, generator, discriminator) and the
//!   training loop.
//! * [`eval`] — distribution distance (MMD), probe classifiers, latent-space
//!   probes, the two-stream recognition experiment, and the ablation suite.
//! * [`cli`] — the `awt` command-line front end.

pub mod cli;
pub mod data;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod training;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A tensor or parameter shape did not match what an operation requires.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// Malformed or inconsistent input data (datasets, checkpoints, manifests).
    #[error("invalid data: {0}")]
    Data(String),
    /// Invalid configuration (CLI flags or config-file contents).
    #[error("invalid config: {0}")]
    Config(String),
    /// A numeric failure: non-finite loss, divergence, or a failed check.
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
