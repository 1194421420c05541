use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, Result};

/// Node identifier. Attackers occupy `0..n_attackers`, victims the range after.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// One timestamped attacker → victim interaction.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalEvent {
    pub src: NodeId,
    pub dst: NodeId,
    /// Seconds since the stream epoch.
    pub t: f64,
    pub features: Vec<f64>,
    pub category: usize,
}

/// Chronologically ordered events over a bipartite attacker/victim node set.
///
/// Node ids are global: `0..n_attackers` are attackers and
/// `n_attackers..n_attackers + n_victims` are victims, so no event can link
/// two nodes of the same kind.
#[derive(Clone, Debug, PartialEq)]
pub struct EventStream {
    events: Vec<TemporalEvent>,
    n_attackers: usize,
    n_victims: usize,
    feature_width: usize,
    category_names: Vec<String>,
    /// Optional human-readable name per node (the IP address for ingested streams).
    node_labels: Vec<String>,
}

impl EventStream {
    pub fn new(
        events: Vec<TemporalEvent>,
        n_attackers: usize,
        n_victims: usize,
        feature_width: usize,
        category_names: Vec<String>,
    ) -> Result<Self> {
        let s = EventStream {
            events,
            n_attackers,
            n_victims,
            feature_width,
            category_names,
            node_labels: Vec::new(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if !labels.is_empty() && labels.len() != self.node_count() {
            return Err(Error::Contract(format!(
                "{} labels for {} nodes",
                labels.len(),
                self.node_count()
            )));
        }
        self.node_labels = labels;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let mut prev = f64::NEG_INFINITY;
        for (i, e) in self.events.iter().enumerate() {
            if !(e.t >= 0.0) || !e.t.is_finite() {
                return Err(Error::Contract(format!("event {i} has time {}", e.t)));
            }
            if e.t < prev {
                return Err(Error::Contract(format!("event {i} is out of chronological order")));
            }
            prev = e.t;
            if !self.is_attacker(e.src) || !self.is_victim(e.dst) {
                return Err(Error::Contract(format!(
                    "event {i} ({} -> {}) is not attacker -> victim",
                    e.src, e.dst
                )));
            }
            if e.features.len() != self.feature_width {
                return Err(Error::Contract(format!(
                    "event {i} has {} features, stream width is {}",
                    e.features.len(),
                    self.feature_width
                )));
            }
            if e.category >= self.category_names.len() {
                return Err(Error::Contract(format!(
                    "event {i} category {} out of {} labels",
                    e.category,
                    self.category_names.len()
                )));
            }
        }
        Ok(())
    }

    pub fn events(&self) -> &[TemporalEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn n_attackers(&self) -> usize {
        self.n_attackers
    }

    pub fn n_victims(&self) -> usize {
        self.n_victims
    }

    pub fn node_count(&self) -> usize {
        self.n_attackers + self.n_victims
    }

    pub fn feature_width(&self) -> usize {
        self.feature_width
    }

    pub fn category_names(&self) -> &[String] {
        &self.category_names
    }

    pub fn n_categories(&self) -> usize {
        self.category_names.len()
    }

    pub fn node_labels(&self) -> &[String] {
        &self.node_labels
    }

    pub fn is_attacker(&self, n: NodeId) -> bool {
        n.0 < self.n_attackers
    }

    pub fn is_victim(&self, n: NodeId) -> bool {
        n.0 >= self.n_attackers && n.0 < self.node_count()
    }

    pub fn attackers(&self) -> impl Iterator<Item = NodeId> {
        (0..self.n_attackers).map(NodeId)
    }

    pub fn victims(&self) -> impl Iterator<Item = NodeId> + '_ {
        (self.n_attackers..self.node_count()).map(NodeId)
    }

    /// Nodes that appear in at least one event.
    pub fn active_nodes(&self) -> BTreeSet<NodeId> {
        self.events.iter().flat_map(|e| [e.src, e.dst]).collect()
    }

    /// Same node space and labels, different events (which must stay sorted).
    pub fn with_events(&self, events: Vec<TemporalEvent>) -> Result<Self> {
        let s = EventStream {
            events,
            n_attackers: self.n_attackers,
            n_victims: self.n_victims,
            feature_width: self.feature_width,
            category_names: self.category_names.clone(),
            node_labels: self.node_labels.clone(),
        };
        s.validate()?;
        Ok(s)
    }

    /// Keeps the events matching `keep`, preserving order and metadata.
    pub fn filter(&self, keep: impl Fn(&TemporalEvent) -> bool) -> Self {
        EventStream {
            events: self.events.iter().filter(|e| keep(e)).cloned().collect(),
            n_attackers: self.n_attackers,
            n_victims: self.n_victims,
            feature_width: self.feature_width,
            category_names: self.category_names.clone(),
            node_labels: self.node_labels.clone(),
        }
    }

    /// Events with `t <= cutoff`.
    pub fn truncate_after(&self, cutoff: f64) -> Self {
        self.filter(|e| e.t <= cutoff)
    }

    /// Event count per category index.
    pub fn category_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.category_names.len()];
        for e in &self.events {
            counts[e.category] += 1;
        }
        counts
    }
}

pub fn is_sorted_by_time(events: &[TemporalEvent]) -> bool {
    events.windows(2).all(|w| w[0].t <= w[1].t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(src: usize, dst: usize, t: f64) -> TemporalEvent {
        TemporalEvent {
            src: NodeId(src),
            dst: NodeId(dst),
            t,
            features: vec![0.0],
            category: 0,
        }
    }

    #[test]
    fn rejects_same_partition_links() {
        let err = EventStream::new(vec![ev(0, 1, 0.0)], 2, 2, 1, vec!["a".into()]);
        assert!(err.is_err());
        assert!(EventStream::new(vec![ev(0, 2, 0.0)], 2, 2, 1, vec!["a".into()]).is_ok());
        assert!(EventStream::new(vec![ev(2, 0, 0.0)], 2, 2, 1, vec!["a".into()]).is_err());
    }

    #[test]
    fn rejects_unsorted_and_bad_category() {
        let cats = vec!["a".to_string()];
        assert!(EventStream::new(vec![ev(0, 2, 5.0), ev(1, 3, 4.0)], 2, 2, 1, cats.clone()).is_err());
        let mut e = ev(0, 2, 0.0);
        e.category = 1;
        assert!(EventStream::new(vec![e], 2, 2, 1, cats).is_err());
    }

    #[test]
    fn partitions_are_disjoint_ranges() {
        let s = EventStream::new(vec![], 3, 2, 1, vec!["a".into()]).unwrap();
        let a: BTreeSet<_> = s.attackers().collect();
        let v: BTreeSet<_> = s.victims().collect();
        assert!(a.is_disjoint(&v));
        assert_eq!(a.len() + v.len(), s.node_count());
    }
}
