//! Desk-scale continual-adaptation engine.
//!
//! A pretrained, frozen policy specializes to a shifted deployment domain
//! without forgetting what it already does well, through three cooperating
//! mechanisms:
//!
//! - **Compressed experience replay**: observations are stored as unit-norm
//!   frozen-encoder embeddings (36.75:1 compression over raw pixels) in dual
//!   fixed-capacity FIFO buffers, successes separated from failures.
//! - **Retrieval-augmented batches**: each training step retrieves the most
//!   similar stored experiences by dot product and mixes 3 successes and 2
//!   failures into the batch, sampled by similarity times temporal recency.
//! - **A thresholded hybrid contrastive loss**: failures become training
//!   signal through a triplet term that switches to InfoNCE when the triplet
//!   value exceeds a threshold, added to the behavioral-cloning loss.
//!
//! Only low-rank adapter factors on the frozen base network are ever
//! trained, so prior capabilities are bounded by construction: base weights
//! and encoder params are checksum-stable across any number of adaptation
//! cycles.
//!
//! The `simenv` module provides a synthetic two-domain manipulation bench
//! with a scripted expert, and `runner` wires everything into reproducible
//! experiments driven by the `xprs` binary (`run` / `compare` / `inspect`).

pub mod adapt;
pub mod config;
pub mod encoder;
pub mod error;
pub mod loss;
pub mod memory;
pub mod metrics;
pub mod policy;
pub mod retrieval;
pub mod runner;
pub mod simenv;

pub use error::{Error, Result};
