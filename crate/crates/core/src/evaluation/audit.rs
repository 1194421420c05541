use super::metrics::pearson;
use super::protocol::score_test;
use crate::config::{BatchOrder, Config};
use crate::engine::{batches, rng_streams, train_with_order_seed, BatchOutput, Engine, Mode};
use crate::error::{Error, Result};
use crate::events::{EventStream, TemporalEvent, TemporalSplit};
use crate::report::Record;

pub const AUDIT_SCHEMA_VERSION: u32 = 1;

/// Where a probe cuts the stream: inside batch `batch`, keeping events up to `cut`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Probe {
    pub batch: usize,
    pub cut: f64,
}

/// Probes in the batches that reach past `from`, evenly thinned to at most
/// `cap`. Each cut is the time of the batch's middle event, so a probe deletes
/// the tail of its own batch as well as everything after it.
pub fn select_probes(events: &[TemporalEvent], batch_size: usize, from: f64, cap: usize) -> Vec<Probe> {
    let eligible: Vec<Probe> = batches(events, batch_size)
        .iter()
        .enumerate()
        .filter(|(_, b)| b.last().is_some_and(|e| e.t > from))
        .map(|(i, b)| Probe {
            batch: i,
            cut: b[b.len() / 2].t,
        })
        .collect();
    if eligible.len() <= cap {
        return eligible;
    }
    (0..cap).map(|j| eligible[j * eligible.len() / cap]).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CausalityReport {
    pub probes: Vec<Probe>,
    /// One entry per compared event: the largest absolute change over its
    /// link probability and category distribution.
    pub deltas: Vec<f64>,
    pub max_delta: f64,
    pub mean_delta: f64,
    /// Correlation of full-stream and truncated-stream link probabilities.
    pub pearson: Option<f64>,
    pub tolerance: f64,
    pub passed: bool,
}

impl CausalityReport {
    pub fn to_records(&self) -> Vec<Record> {
        vec![Record::new("causality")
            .with("probes", self.probes.len())
            .with("compared", self.deltas.len())
            .with_f64("max_delta", self.max_delta)
            .with_f64("mean_delta", self.mean_delta)
            .with("pearson", self.pearson.map_or("N/A".into(), crate::report::format_f64))
            .with_f64("tolerance", self.tolerance)
            .with("result", if self.passed { "pass" } else { "fail" })]
    }
}

fn replay(engine: &Engine, events: &[TemporalEvent], stop_after: usize) -> Result<Vec<BatchOutput>> {
    let mut e = engine.clone();
    e.reset_state();
    e.reseed_negatives(rng_streams::EVAL);
    let size = e.config().batch_size;
    batches(events, size)
        .into_iter()
        .take(stop_after + 1)
        .map(|b| e.process_batch(b, Mode::Eval, 0))
        .collect()
}

fn bitwise_equal(a: &[BatchOutput], b: &[BatchOutput]) -> bool {
    let same = |x: &[f64], y: &[f64]| x.len() == y.len() && x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits());
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            same(&x.positive, &y.positive)
                && x.category.len() == y.category.len()
                && x.category.iter().zip(&y.category).all(|(p, q)| same(p, q))
        })
}

/// Checks that predictions never depend on later events.
///
/// Run A processes the full stream; for each probe, run B processes the
/// stream with every event after the probe's cut deleted. Both start from
/// the parameters of `engine` with reset memory. Events of the probe batch
/// that survive the cut are compared. Run A is executed twice first and any
/// difference is reported as nondeterminism.
pub fn causality_audit(
    engine: &Engine,
    stream: &EventStream,
    probes: &[Probe],
    tolerance: f64,
) -> Result<CausalityReport> {
    let last = probes.iter().map(|p| p.batch).max().unwrap_or(0);
    let full = replay(engine, stream.events(), last)?;
    if !bitwise_equal(&full, &replay(engine, stream.events(), last)?) {
        return Err(Error::Nondeterminism("two replays of the full stream disagree".into()));
    }
    let size = engine.config().batch_size;
    let mut deltas = Vec::new();
    let (mut pa, mut pb) = (Vec::new(), Vec::new());
    for p in probes {
        let a = full
            .get(p.batch)
            .ok_or_else(|| Error::Contract(format!("probe batch {} is past the stream", p.batch)))?;
        let truncated = stream.truncate_after(p.cut);
        let b_runs = replay(engine, truncated.events(), p.batch)?;
        let b = &b_runs[p.batch];
        let first = p.batch * size;
        let kept = stream.events()[first..first + a.positive.len()]
            .iter()
            .take_while(|e| e.t <= p.cut)
            .count();
        for i in 0..kept {
            let mut d = (a.positive[i] - b.positive[i]).abs();
            for (x, y) in a.category[i].iter().zip(&b.category[i]) {
                d = d.max((x - y).abs());
            }
            deltas.push(d);
            pa.push(a.positive[i]);
            pb.push(b.positive[i]);
        }
    }
    let max_delta = deltas.iter().copied().fold(0.0, f64::max);
    let mean_delta = if deltas.is_empty() {
        0.0
    } else {
        deltas.iter().sum::<f64>() / deltas.len() as f64
    };
    Ok(CausalityReport {
        probes: probes.to_vec(),
        max_delta,
        mean_delta,
        pearson: pearson(&pa, &pb),
        tolerance,
        passed: max_delta <= tolerance,
        deltas,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrderReport {
    pub runs: usize,
    /// Sample variance across runs of each positive test event's link probability.
    pub variances: Vec<f64>,
    pub mean_variance: f64,
    pub max_variance: f64,
    /// `(threshold, fraction of events with variance below it)`.
    pub below: Vec<(f64, f64)>,
}

impl OrderReport {
    pub fn to_records(&self) -> Vec<Record> {
        let mut r = Record::new("order")
            .with("runs", self.runs)
            .with("edges", self.variances.len())
            .with_f64("mean_variance", self.mean_variance)
            .with_f64("max_variance", self.max_variance);
        for (t, f) in &self.below {
            r = r.with_f64(&format!("fraction_below_{t:e}"), *f);
        }
        vec![r]
    }
}

/// Trains one model per order seed, batches shuffled, from identical initial
/// parameters, then scores the test partition chronologically with each and
/// measures how much the per-event link probabilities move between runs.
pub fn order_invariance_audit(cfg: &Config, split: &TemporalSplit, order_seeds: &[u64]) -> Result<OrderReport> {
    if order_seeds.len() < 2 {
        return Err(Error::Config("the order audit needs at least two runs".into()));
    }
    let mut cfg = cfg.clone();
    cfg.batch_order = BatchOrder::Shuffled;
    let mut runs: Vec<Vec<f64>> = Vec::with_capacity(order_seeds.len());
    for &seed in order_seeds {
        let mut e = Engine::new(&cfg, &split.train)?;
        train_with_order_seed(&mut e, &split.train, &split.validation, seed)?;
        runs.push(score_test(&e, split)?.into_iter().map(|s| s.positive).collect());
    }
    let r = runs.len() as f64;
    let n = runs[0].len();
    let variances: Vec<f64> = (0..n)
        .map(|i| {
            let mean = runs.iter().map(|p| p[i]).sum::<f64>() / r;
            runs.iter().map(|p| (p[i] - mean).powi(2)).sum::<f64>() / (r - 1.0)
        })
        .collect();
    let frac = |t: f64| {
        if n == 0 {
            1.0
        } else {
            variances.iter().filter(|&&v| v < t).count() as f64 / n as f64
        }
    };
    Ok(OrderReport {
        runs: runs.len(),
        mean_variance: if n == 0 { 0.0 } else { variances.iter().sum::<f64>() / n as f64 },
        max_variance: variances.iter().copied().fold(0.0, f64::max),
        below: vec![(1e-3, frac(1e-3)), (1e-2, frac(1e-2))],
        variances,
    })
}
