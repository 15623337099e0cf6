//! Dataset-quality auditing toolkit.
//!
//! Computes classical (total variation) and task-guided image-quality scores,
//! measures how well they track and predict classifier correctness, builds
//! clean/corrupted mixture datasets, and checks the conditional-independence
//! structure behind those measurements with d-separation and simulation.

pub mod causal;
pub mod cli;
pub mod corruptions;
pub mod image_metrics;
pub mod plot;
pub mod predictability;
pub mod rng;
pub mod stats;
pub mod tensor_io;
pub mod tg_iqa;
