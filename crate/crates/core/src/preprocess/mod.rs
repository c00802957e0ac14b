//! Record → X/Y/Z representative beat: QRS onsets, median beat over aligned
//! 750 ms windows, lead selection, Kors transform and dataset scaling.

mod beat;
mod kors;
mod qrs;
mod scaling;

use thiserror::Error;

pub use beat::{
    extract_representative_beat, BeatMatrix, Segment, XyzBeat, BEAT_LEN, BEAT_RATE_HZ, ONSET_SAMPLE, PRE_ONSET_MS,
    SEGMENT_LEN, XYZ_LEADS,
};
pub use kors::{derive_missing_leads, kors_transform, KorsMatrix, DEFAULT_KORS_TEXT};
pub use qrs::detect_qrs_onsets;
pub use scaling::{scale_dataset, ScalingParams};

use crate::signal_io::{EcgRecord, SignalError};

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("record {0}: no complete 750 ms window around any QRS onset")]
    NoCompleteWindow(String),
    #[error("missing lead {0}")]
    MissingLead(String),
    #[error("shape mismatch for {what}: expected {expected} values, got {got}")]
    Shape { what: String, expected: usize, got: usize },
    #[error("beat {0} contains non-finite values")]
    NonFinite(String),
    #[error("dataset maximum absolute amplitude is zero")]
    DegenerateScale,
    #[error("cannot scale an empty dataset")]
    EmptyDataset,
    #[error("lead transform matrix: {0}")]
    KorsMatrix(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// Full per-record pipeline: onsets → representative beat → 8 leads → X/Y/Z.
pub fn preprocess_record(record: &EcgRecord, matrix: &KorsMatrix) -> Result<XyzBeat, PreprocessError> {
    let onsets = detect_qrs_onsets(record);
    let beat = extract_representative_beat(record, &onsets)?;
    let eight = derive_missing_leads(&beat)?;
    kors_transform(&eight, matrix, record.id())
}
