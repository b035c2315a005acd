//! Detection of combined false-data-injection and availability attacks on
//! DC state estimation with an LSTM denoising autoencoder.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`grid`]: case parsing and the DC observation matrix `H`.
//! - [`estimation`]: WLS state estimation and residual-based bad-data detection.
//! - [`pipeline`]: synthetic load profiles, DC dispatch, measurement series,
//!   min-max scaling and sliding windows.
//! - [`attack`]: stealthy single-state FDIAs, availability masks (MCAR and
//!   attack-neighbourhood MAR), successive and replay attacks, campaigns.
//! - [`nn`]: LSTM and dense autoencoders with random input dropout, trained by
//!   backpropagation through time and Adam.
//! - [`detector`]: anomaly scores, per-missing-ratio thresholds and metrics.
//! - [`experiment`]: run configuration, artifacts and report rendering used by
//!   the command-line driver.

pub mod artifact;
pub mod attack;
pub mod detector;
pub mod estimation;
pub mod experiment;
pub mod grid;
pub mod nn;
pub mod pipeline;
pub mod seed;
pub mod stats;
