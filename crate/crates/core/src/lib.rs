//! Toxin–protein interaction prediction.
//!
//! Dual sequence encoders feed a stacked self-/cross-attention interaction
//! module and a pairwise prediction head. The crate also carries the
//! training loop (RAdam + LookAhead), evaluation metrics and protocols, and
//! attention-based hotspot extraction. Everything runs on a small built-in
//! reverse-mode tensor engine.

pub mod data;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod model;
pub mod parallel;
pub mod params;
pub mod protocol;
pub mod tensor;
pub mod toy;
pub mod train;

pub use error::{Error, Result};
