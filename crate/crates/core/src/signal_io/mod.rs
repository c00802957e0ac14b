//! ECG record model, dataset files and the synthetic generator.

mod container;
mod csv_form;
mod record;
mod synth;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use container::{decode_dataset, encode_dataset, read_dataset, write_dataset};
pub use csv_form::{read_record_csv, write_record_csv};
pub use record::{EcgRecord, INDEPENDENT_LEADS};
pub use synth::{
    generate_synthetic_ecg, random_beat_params, synthetic_corpus, synthetic_corpus_iter, CorpusParams, SyntheticBeatParams, WaveParams,
    QRS_ONSET_WIDTHS,
};

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("invalid record {id}: {message}")]
    InvalidRecord { id: String, message: String },
    #[error("invalid synthetic parameters: {0}")]
    InvalidParams(String),
    #[error("format error{} at byte {offset}: {message}", .record.as_ref().map(|r| format!(" in record {r}")).unwrap_or_default())]
    Format { record: Option<String>, offset: u64, message: String },
    #[error("{}:{line}: {message}", .path.display())]
    Csv { path: PathBuf, line: u64, message: String },
    #[error("{} too large for the container format", .0)]
    TooLarge(&'static str),
    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl SignalError {
    pub(crate) fn invalid(id: &str, message: impl Into<String>) -> Self {
        SignalError::InvalidRecord { id: id.to_string(), message: message.into() }
    }

    pub(crate) fn too_large(what: &'static str) -> Self {
        SignalError::TooLarge(what)
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        SignalError::Io { path: path.to_path_buf(), source }
    }
}
