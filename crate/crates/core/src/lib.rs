//! Compression of multi-lead ECG recordings into 30-dimensional latent
//! encodings of a representative beat.

pub mod autodiff;
pub mod latent_models;
pub mod metrics;
pub mod preprocess;
pub mod signal_io;
