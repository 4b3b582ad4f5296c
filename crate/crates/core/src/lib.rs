//! Multi-modal knowledge graph completion in biquaternion space.
//!
//! Entities carry three independent modality representations (structure,
//! vision, text) plus one relation-conditioned fused representation. The four
//! are placed on the bases `1, i, j, k` of a biquaternion and scored with a
//! translate-then-rotate Hamilton product query against every candidate tail.
//!
//! Module map:
//! - [`hypercomplex`]: complex / quaternion / biquaternion kernels over blocks.
//! - [`kgdata`]: triple and feature ingestion, filter index, corruption.
//! - [`model`]: parameters, forward pass, every loss term and its gradient.
//! - [`train`]: Adagrad and the epoch loop.
//! - [`eval`]: filtered ranking and MRR / Hit@K.
//! - [`checkpoint`]: the `MHCK` binary parameter format.
//! - [`diagnostics`]: randomized self-check suites shared by tests and the CLI.

pub mod checkpoint;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod hypercomplex;
pub mod kgdata;
pub mod model;
pub mod real;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
pub use real::Real;
