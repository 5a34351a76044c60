//! Courtesy-conditioned car-following models.
//!
//! The crate covers the whole pipeline: trajectory ingestion and event
//! extraction, discourtesy labelling, a small reverse-mode autodiff engine,
//! LSTM / LSTM-IDM / Transformer follower models with optional discourtesy
//! conditioning, closed-loop rollout, composite-loss training, evaluation and
//! controllability analysis, and a synthetic corpus generator.

pub mod autodiff;
pub mod courtesy;
mod error;
pub mod evaluation;
pub mod models;
pub mod rollout;
pub mod synthcorpus;
pub mod training;
pub mod trajectory;

pub use error::{Error, Result};

/// Canonical sample interval (s) that all trajectories are resampled to.
pub const DEFAULT_DT: f64 = 0.1;
