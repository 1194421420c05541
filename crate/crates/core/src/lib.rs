//! Continuous-time temporal graph learning over attacker/victim alert streams.
//!
//! The crate is organized bottom-up:
//!
//! - [`numcore`]: arrays, the differentiation tape, seeded randomness, Adam.
//! - [`events`]: alert ingestion, the bipartite event stream, splitting and sampling.
//! - [`encoders`]: time encoding, message function, GRU, BiGRU, Transformer block.
//! - [`aggregators`]: last, mean, attention, BiGRU and BiTA message aggregation.
//! - [`heads`]: link and category heads with their losses.
//! - [`config`]: run configuration in `key = value` form.
//! - [`persist`]: the binary container behind parameter files and checkpoints.
//! - [`pipeline`]: balancing, splitting and masking ahead of training.
//! - [`engine`]: raw message store, node memory, batched training and inference.
//! - [`evaluation`]: ranking and classification metrics plus the causality and
//!   batch-order audits.

pub mod aggregators;
pub mod config;
pub mod encoders;
pub mod engine;
pub mod evaluation;
pub mod events;
pub mod heads;
pub mod numcore;
pub mod persist;
pub mod pipeline;
pub mod report;

mod error;

pub use error::{Error, Result};
