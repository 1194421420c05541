//! Inference latency sweeps shared by `tgn bench` and the criterion benches.
//!
//! Each measurement replays a stream through a fresh copy of an engine in
//! evaluation mode, timing every full batch. Latencies are reported per
//! edge; throughput is measured independently from the wall time of the
//! whole loop so it can be checked against the per-batch timings.

use std::time::Instant;

use tgn_core::config::Config;
use tgn_core::engine::{batches, Engine, Mode};
use tgn_core::events::{nearest_rank, synth_stream, EventStream, SynthSpec};
use tgn_core::numcore::Rng;
use tgn_core::report::Record;
use tgn_core::Result;

pub const BENCH_SCHEMA_VERSION: u32 = 1;

/// Relative tolerance between measured and implied throughput.
pub const CONSISTENCY_TOLERANCE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct LatencyRow {
    pub sweep: &'static str,
    pub batch_size: usize,
    pub edges: usize,
    pub batches: usize,
    /// Per-edge latency statistics in milliseconds.
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
    /// Edges per second over the whole timed loop.
    pub throughput: f64,
    /// `batch_size / mean batch latency`.
    pub implied_throughput: f64,
}

impl LatencyRow {
    pub fn consistent(&self) -> bool {
        (self.throughput - self.implied_throughput).abs() <= CONSISTENCY_TOLERANCE * self.implied_throughput
    }

    pub fn ordered(&self) -> bool {
        self.p99_ms >= self.p95_ms && self.p95_ms >= self.median_ms
    }

    pub fn to_record(&self) -> Record {
        Record::new("latency")
            .with("sweep", self.sweep)
            .with("batch_size", self.batch_size)
            .with("edges", self.edges)
            .with("batches", self.batches)
            .with_f64("mean_ms", self.mean_ms)
            .with_f64("median_ms", self.median_ms)
            .with_f64("p95_ms", self.p95_ms)
            .with_f64("p99_ms", self.p99_ms)
            .with_f64("throughput", self.throughput)
            .with_f64("implied_throughput", self.implied_throughput)
            .with("consistent", self.consistent())
    }
}

/// A synthetic stream with at least `edges` events, cut to exactly that many.
pub fn synthetic_edges(edges: usize, seed: u64) -> Result<EventStream> {
    let mut spec = SynthSpec::default();
    loop {
        let s = synth_stream(&spec, &mut Rng::new(seed))?;
        if s.len() >= edges {
            return s.with_events(s.events()[..edges].to_vec());
        }
        spec.horizon *= 2.0;
    }
}

/// Times inference over the full batches of `stream`. A partial final batch
/// is skipped so that every timed batch has `batch_size` edges.
pub fn measure(engine: &Engine, stream: &EventStream, batch_size: usize, sweep: &'static str) -> Result<LatencyRow> {
    let mut e = engine.clone();
    e.reset_state();
    let full: Vec<_> = batches(stream.events(), batch_size)
        .into_iter()
        .filter(|b| b.len() == batch_size)
        .collect();
    let mut batch_secs = Vec::with_capacity(full.len());
    let start = Instant::now();
    for b in &full {
        let t0 = Instant::now();
        e.process_batch(b, Mode::Eval, 0)?;
        batch_secs.push(t0.elapsed().as_secs_f64());
    }
    let wall = start.elapsed().as_secs_f64();

    let edges = full.len() * batch_size;
    let mut per_edge_ms: Vec<f64> = batch_secs.iter().map(|s| s * 1e3 / batch_size as f64).collect();
    per_edge_ms.sort_by(f64::total_cmp);
    let n = per_edge_ms.len().max(1) as f64;
    let mean_batch = batch_secs.iter().sum::<f64>() / n;
    let pct = |p: f64| if per_edge_ms.is_empty() { 0.0 } else { nearest_rank(&per_edge_ms, p) };
    Ok(LatencyRow {
        sweep,
        batch_size,
        edges,
        batches: full.len(),
        mean_ms: per_edge_ms.iter().sum::<f64>() / n,
        median_ms: pct(50.0),
        p95_ms: pct(95.0),
        p99_ms: pct(99.0),
        throughput: if wall > 0.0 { edges as f64 / wall } else { 0.0 },
        implied_throughput: if mean_batch > 0.0 { batch_size as f64 / mean_batch } else { 0.0 },
    })
}

/// One row per batch size over a stream of `edges`, then one row per graph
/// size at the configured batch size. The engine keeps its initial
/// parameters: latency does not depend on what was learned.
pub fn sweep(cfg: &Config, batch_sizes: &[usize], graph_sizes: &[usize], edges: usize) -> Result<Vec<LatencyRow>> {
    let mut rows = Vec::new();
    let base = synthetic_edges(edges.max(graph_sizes.iter().copied().max().unwrap_or(0)), cfg.seed)?;
    let engine = Engine::new(cfg, &base)?;
    let head = |n: usize| base.with_events(base.events()[..n.min(base.len())].to_vec());
    let stream = head(edges)?;
    for &b in batch_sizes {
        rows.push(measure(&engine, &stream, b, "batch_size")?);
    }
    for &g in graph_sizes {
        rows.push(measure(&engine, &head(g)?, cfg.batch_size, "graph_size")?);
    }
    Ok(rows)
}
