//! Reconstruction fidelity, beat measurements and downstream probes.

mod dtw;
mod measure;
mod probe;
mod reconstruction;
mod report;

use thiserror::Error;

pub use dtw::dtw_distance;
pub use measure::{measure_beat, MeasurementSet, NOISE_FLOOR_SAMPLES, PEAK_FRACTION};
pub use probe::{
    auroc, evaluate_probe, fit_linear_probe, fit_logistic_probe, r_squared, sensitivity_at_specificity, LinearProbe,
    LogisticProbe, Probe, ProbeReport, Targets, TaskKind,
};
pub use reconstruction::{reconstruction_metrics, LeadReport, MeanSd, ReconstructionReport, ReconstructionSummary};
pub use report::Table;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("DTW needs nonempty sequences")]
    EmptySequence,
    #[error("shape mismatch for {what}: expected {expected}, got {got}")]
    Shape { what: String, expected: usize, got: usize },
    #[error("AUROC is undefined when only one class is present")]
    SingleClass,
    #[error("ill-conditioned normal equations (reciprocal condition {0:e}); use l2 > 0")]
    Conditioning(f64),
    #[error("need more samples ({samples}) than features ({dim})")]
    InsufficientSamples { samples: usize, dim: usize },
    #[error("logistic fit did not converge in {0} iterations")]
    NotConverged(usize),
    #[error("{0}")]
    InvalidArgument(String),
}

/// Held-out membership by record id: a stable hash puts one id in ten in
/// the test split.
pub fn is_held_out(id: &str) -> bool {
    // FNV-1a, 64 bit.
    let h = id.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3));
    h % 10 == 0
}
