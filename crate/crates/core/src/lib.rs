//! Federated chain-of-thought discrimination engine.
//!
//! The pipeline: candidate reasoning paths arrive per client (synthetic or
//! JSONL), get labeled by answer correctness, and train per-client LoRA
//! discriminators. The server aggregates adapters noise-free by block
//! stacking and averages classifier heads, and the resulting global
//! discriminator picks the best of K candidates at inference.
//!
//! Modules follow the pipeline stages:
//!
//! - [`linalg`]: dense matrices, block stacking, norms
//! - [`corpus`]: ingestion, answer extraction, labeling, featurization
//! - [`synth`]: synthetic federation with a planted correctness signal
//! - [`discriminator`]: the LoRA-adapted scorer and its training loop
//! - [`federation`]: server rounds, stacking vs naive aggregation
//! - [`selection`]: best-of-K selection and evaluation metrics
//! - [`cli`]: run configuration, commands, checkpoints, reports

pub mod cli;
pub mod corpus;
pub mod discriminator;
pub mod error;
pub mod federation;
pub mod linalg;
pub mod rng;
pub mod selection;
pub mod synth;

pub use error::{Error, Result};
