//! The VAE family and the incremental-PCA baseline, all producing
//! 30-dimensional encodings of scaled X/Y/Z beats.

mod encoding;
mod loss;
mod pca;
mod persist;
mod schedule;
mod vae;
mod variant;


use thiserror::Error;

pub use encoding::{reparameterize, standard_normal, LatentEncoding};
pub use loss::{elbo_loss, kl_divergence, weighted_reconstruction_loss, LossBreakdown, LossWeights};
pub use pca::PcaModel;
pub use persist::{model_from_bytes, model_to_bytes};
pub use schedule::{beta_at, BetaSchedule, ScheduleKind};
pub use vae::{architecture, build_network, Architecture, EpochLog, ForwardPass, TrainingLog, VaeModel, LOG_VAR_BIAS_INIT};
pub use variant::{Variant, VariantConfig};

use crate::autodiff::AutodiffError;
use crate::preprocess::{PreprocessError, XyzBeat};

#[derive(Debug, Error)]
pub enum LatentError {
    #[error("invalid configuration: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error("shape mismatch for {what}: expected {expected}, got {got}")]
    Shape { what: String, expected: usize, got: usize },
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Diverged { epoch: usize, batch: usize, detail: String },
    #[error("model not fitted: {seen} samples seen, at least {needed} required")]
    NotFitted { seen: usize, needed: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("linear algebra failure: {0}")]
    Linalg(String),
    #[error("model payload: {0}")]
    Format(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
}

/// Any of the seven encoders.
#[derive(Clone, Debug)]
pub enum LatentModel {
    Vae(VaeModel),
    Pca(PcaModel),
}

impl LatentModel {
    pub fn name(&self) -> &'static str {
        match self {
            LatentModel::Vae(m) => m.config().variant.name(),
            LatentModel::Pca(_) => "PCA",
        }
    }

    pub fn encode(&self, beat: &XyzBeat, epsilon_seed: u64) -> Result<LatentEncoding, LatentError> {
        match self {
            LatentModel::Vae(m) => m.encode(beat, epsilon_seed),
            LatentModel::Pca(m) => Ok(LatentEncoding { epsilon_seed, ..m.encode(beat)? }),
        }
    }

    pub fn reconstruct(&self, beat: &XyzBeat) -> Result<XyzBeat, LatentError> {
        match self {
            LatentModel::Vae(m) => m.reconstruct(beat),
            LatentModel::Pca(m) => m.reconstruct(beat),
        }
    }

    pub fn latent_dim(&self) -> usize {
        match self {
            LatentModel::Vae(m) => m.config().latent_dim,
            LatentModel::Pca(m) => m.n_components(),
        }
    }
}
