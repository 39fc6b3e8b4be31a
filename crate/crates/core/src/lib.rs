//! Perturbation-based token attribution for black-box text generators.
//!
//! A prompt is tokenized and perturbed, each variant is sent to a generator,
//! and the shift between outputs is measured with optimal-transport
//! distances. A kernel-weighted linear surrogate fitted on the perturbation
//! masks yields one attribution score per token.

pub mod embedding;
pub mod gateway;
pub mod metrics;
pub mod pipeline;
pub mod significance;
pub mod surrogate;
pub mod text;
pub mod transport;
