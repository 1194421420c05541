//! Descriptive statistics of an event stream.

use std::collections::BTreeMap;

use super::stream::{EventStream, NodeId};
use crate::report::Record;

pub const STATS_SCHEMA_VERSION: u32 = 1;

/// Fixed-width histogram over non-negative values; bin `k` covers `[k*w, (k+1)*w)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub bin_width: f64,
    pub counts: BTreeMap<usize, usize>,
}

impl Histogram {
    pub fn new(bin_width: f64) -> Self {
        Histogram {
            bin_width,
            counts: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, value: f64) {
        let bin = (value.max(0.0) / self.bin_width).floor() as usize;
        *self.counts.entry(bin).or_insert(0) += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    /// Lower edge of the fullest bin; the earliest bin wins ties.
    pub fn mode(&self) -> Option<f64> {
        let mut best: Option<(usize, usize)> = None;
        for (&bin, &c) in &self.counts {
            if best.is_none_or(|(_, bc)| c > bc) {
                best = Some((bin, c));
            }
        }
        best.map(|(bin, _)| bin as f64 * self.bin_width)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StreamStats {
    pub event_count: usize,
    /// Gaps between consecutive events of the whole stream.
    pub global_intervals: Vec<f64>,
    pub global: Histogram,
    /// Gaps between consecutive events of the same attacker.
    pub per_source: Histogram,
    /// Gaps between consecutive events of the same attacker/victim pair.
    pub per_pair: Histogram,
    /// `(time, events so far)` at each distinct timestamp.
    pub cumulative: Vec<(f64, usize)>,
    pub category_counts: Vec<(String, usize)>,
}

pub fn stream_stats(stream: &EventStream, bin_width: f64) -> StreamStats {
    let events = stream.events();
    let mut global = Histogram::new(bin_width);
    let mut per_source = Histogram::new(bin_width);
    let mut per_pair = Histogram::new(bin_width);
    let global_intervals: Vec<f64> = events.windows(2).map(|w| w[1].t - w[0].t).collect();
    for &g in &global_intervals {
        global.add(g);
    }
    let mut last_src: BTreeMap<NodeId, f64> = BTreeMap::new();
    let mut last_pair: BTreeMap<(NodeId, NodeId), f64> = BTreeMap::new();
    let mut cumulative: Vec<(f64, usize)> = Vec::new();
    for (i, e) in events.iter().enumerate() {
        if let Some(prev) = last_src.insert(e.src, e.t) {
            per_source.add(e.t - prev);
        }
        if let Some(prev) = last_pair.insert((e.src, e.dst), e.t) {
            per_pair.add(e.t - prev);
        }
        match cumulative.last_mut() {
            Some(last) if last.0 == e.t => last.1 = i + 1,
            _ => cumulative.push((e.t, i + 1)),
        }
    }
    let category_counts = stream
        .category_names()
        .iter()
        .cloned()
        .zip(stream.category_counts())
        .collect();
    StreamStats {
        event_count: events.len(),
        global_intervals,
        global,
        per_source,
        per_pair,
        cumulative,
        category_counts,
    }
}

impl StreamStats {
    pub fn to_records(&self) -> Vec<Record> {
        let mut out = vec![
            Record::header("stream_stats", STATS_SCHEMA_VERSION),
            Record::new("summary")
                .with("events", self.event_count)
                .with("categories", self.category_counts.len()),
        ];
        for (scope, h) in [
            ("global", &self.global),
            ("source", &self.per_source),
            ("pair", &self.per_pair),
        ] {
            out.push(
                Record::new("interval_mode")
                    .with("scope", scope)
                    .with_f64("bin_start", h.mode().unwrap_or(f64::NAN))
                    .with("intervals", h.total()),
            );
            for (&bin, &count) in &h.counts {
                out.push(
                    Record::new("histogram")
                        .with("scope", scope)
                        .with_f64("bin_start", bin as f64 * h.bin_width)
                        .with_f64("bin_end", (bin + 1) as f64 * h.bin_width)
                        .with("count", count),
                );
            }
        }
        for &(t, n) in &self.cumulative {
            out.push(Record::new("cumulative").with_f64("t", t).with("count", n));
        }
        for (name, n) in &self.category_counts {
            out.push(Record::new("category").with("name", name).with("count", n));
        }
        out
    }
}
