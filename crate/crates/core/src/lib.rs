//! Multilayer α-divergence NMF for single-channel heart/lung sound
//! separation and spectrogram clustering.

pub mod advisor;
pub mod audio;
pub mod bss;
pub mod cli;
pub mod cluster;
pub mod error;
pub mod json;
pub mod matrix;
pub mod multilayer;
pub mod nmf;
pub mod rng;
pub mod separation;
pub mod spectral;

pub use error::{Error, Result};
pub use matrix::NonNegMatrix;
pub use nmf::{AlphaNmfConfig, FactorizationResult};
