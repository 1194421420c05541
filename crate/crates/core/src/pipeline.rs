//! The data path shared by every command that trains.

use crate::config::Config;
use crate::engine::rng_streams;
use crate::error::Result;
use crate::events::{balance_classes, inductive_mask, temporal_split, EventStream, TemporalSplit};
use crate::numcore::Rng;

/// Optional class balancing, the chronological split, then new-node masking,
/// each drawing from its own fork of the run seed.
pub fn prepare(stream: &EventStream, cfg: &Config) -> Result<TemporalSplit> {
    let base = Rng::new(cfg.seed);
    let balanced;
    let stream = if cfg.balance {
        balanced = balance_classes(stream, &mut base.fork(rng_streams::BALANCE))?;
        &balanced
    } else {
        stream
    };
    let split = temporal_split(stream);
    Ok(inductive_mask(stream, &split, &mut base.fork(rng_streams::MASK), cfg.inductive_fraction))
}
