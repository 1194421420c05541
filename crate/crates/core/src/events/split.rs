use std::collections::{BTreeMap, BTreeSet};

use super::stream::{EventStream, NodeId, TemporalEvent};
use crate::numcore::Rng;

/// Cut-off times and the withheld node set.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitSpec {
    pub t_validation: f64,
    /// Equal to `t_validation` only when the timestamps are degenerate.
    pub t_test: f64,
    pub new_nodes: BTreeSet<NodeId>,
}

impl SplitSpec {
    pub fn touches_new_node(&self, e: &TemporalEvent) -> bool {
        self.new_nodes.contains(&e.src) || self.new_nodes.contains(&e.dst)
    }
}

#[derive(Clone, Debug)]
pub struct TemporalSplit {
    pub spec: SplitSpec,
    pub train: EventStream,
    pub validation: EventStream,
    pub test: EventStream,
}

/// Nearest-rank percentile of an ascending sequence: the value at rank `ceil(p/100 * n)`.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Chronological 70/15/15 split on timestamp percentiles.
///
/// Train is `t <= t_validation`, validation `t_validation < t <= t_test`, test
/// `t > t_test`.
pub fn temporal_split(stream: &EventStream) -> TemporalSplit {
    split_at_percentiles(stream, 70.0, 85.0)
}

pub fn split_at_percentiles(stream: &EventStream, p_val: f64, p_test: f64) -> TemporalSplit {
    let times: Vec<f64> = stream.events().iter().map(|e| e.t).collect();
    let (t_validation, t_test) = if times.is_empty() {
        (0.0, 0.0)
    } else {
        (nearest_rank(&times, p_val), nearest_rank(&times, p_test))
    };
    TemporalSplit {
        spec: SplitSpec {
            t_validation,
            t_test,
            new_nodes: BTreeSet::new(),
        },
        train: stream.filter(|e| e.t <= t_validation),
        validation: stream.filter(|e| e.t > t_validation && e.t <= t_test),
        test: stream.filter(|e| e.t > t_test),
    }
}

/// Withholds a random set of late-appearing nodes for inductive evaluation.
///
/// The pool is every node whose first event is after `t_validation`; up to
/// `round(fraction * unique_nodes)` of them are drawn uniformly (the whole
/// pool if it is smaller). Training events touching a drawn node are removed.
pub fn inductive_mask(stream: &EventStream, split: &TemporalSplit, rng: &mut Rng, fraction: f64) -> TemporalSplit {
    let mut first_seen: BTreeMap<NodeId, f64> = BTreeMap::new();
    for e in stream.events() {
        first_seen.entry(e.src).or_insert(e.t);
        first_seen.entry(e.dst).or_insert(e.t);
    }
    let pool: Vec<NodeId> = first_seen
        .iter()
        .filter(|(_, &t)| t > split.spec.t_validation)
        .map(|(&n, _)| n)
        .collect();
    let target = (fraction * first_seen.len() as f64).round() as usize;
    let new_nodes: BTreeSet<NodeId> = rng
        .sample_indices(pool.len(), target.min(pool.len()))
        .into_iter()
        .map(|i| pool[i])
        .collect();

    let spec = SplitSpec {
        new_nodes,
        ..split.spec.clone()
    };
    let train = split.train.filter(|e| !spec.touches_new_node(e));
    TemporalSplit {
        spec,
        train,
        validation: split.validation.clone(),
        test: split.test.clone(),
    }
}
