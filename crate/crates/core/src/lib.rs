//! Link-level simulation of an OFDM vehicle-to-infrastructure uplink.
//!
//! The crate is organised bottom-up:
//!
//! - [`ofdm`]: 4-QAM mapping, unitary OFDM modulation with cyclic prefix, the DFT matrix.
//! - [`channel`]: large-scale gain, Doppler-rotated multipath taps along a vehicle trajectory, AWGN.
//! - [`estimators`]: least-squares and MMSE channel estimation, one-tap equalization.
//! - [`mlp`]: a bias-free 2-input/2-output perceptron trained by per-sample backpropagation.
//! - [`harness`]: datasets, metrics and Monte Carlo BER sweeps comparing the estimators.
//! - [`config`]: INI-style run configuration shared by the command line tool.
//!
//! Monte Carlo loops run on rayon when the `parallel` feature is enabled (the
//! default); see [`exec::Execution`].

pub mod channel;
pub mod config;
pub mod error;
pub mod estimators;
pub mod exec;
pub mod format;
pub mod harness;
pub mod mlp;
pub mod ofdm;
pub mod rng;

pub use error::{Error, Result};
pub use num_complex::Complex64;
