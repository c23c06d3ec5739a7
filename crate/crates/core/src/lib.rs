//! Gait phase analysis with multi-output Gaussian processes and hidden Markov
//! models.
//!
//! The pipeline preprocesses triangulated joint trajectories, fits an ICM
//! Gaussian process over the six vertical joint signals, decodes bilateral
//! ankle observations with a four-state HMM (normal/abnormal stance/swing),
//! and scores predictions with MAE, R² and DTW.

pub mod cli;
pub mod dataio;
pub mod error;
pub mod hmm;
pub mod kernels;
pub mod kv;
pub mod metrics;
pub mod mogp;
pub mod pipeline;
pub mod signal;

pub use error::{Error, Result};
