//! UAV sensor anomaly detection with a stacked LSTM autoencoder.
//!
//! Raw multi-rate sensor logs are pooled onto a fixed grid, normalized,
//! projected with PCA and reconstructed by a greedily trained stack of LSTM
//! sub-autoencoders. Per-frame reconstruction loss is compared against a
//! static or rolling threshold to flag anomalous frames.

pub mod artifact;
pub mod autoencoder;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod ingest;
pub mod lstm;
pub mod matrix;
pub mod pipeline;
pub mod plot;
pub mod preprocess;
pub mod synth;
pub mod thresholding;
pub mod training;

pub use error::{Error, Result};
pub use matrix::Matrix;
