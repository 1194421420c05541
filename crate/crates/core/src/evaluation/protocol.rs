use std::fmt;
use std::str::FromStr;

use super::metrics::{
    auc, average_precision, curve_points, mrr_hits, per_class_metrics, ClassReport, CurvePoint, RankMetrics,
    RankTask, ScoredSet,
};
use crate::engine::{batches, rng_streams, Engine, Mode};
use crate::error::{Error, Result};
use crate::events::TemporalSplit;
use crate::report::Record;

pub const EVAL_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EvalMode {
    /// Test events whose endpoints were both visible in training.
    Transductive,
    /// Test events touching a withheld node.
    Inductive,
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalMode::Transductive => "transductive",
            EvalMode::Inductive => "inductive",
        })
    }
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transductive" => Ok(EvalMode::Transductive),
            "inductive" => Ok(EvalMode::Inductive),
            _ => Err(Error::Config(format!("unknown evaluation mode {s:?}"))),
        }
    }
}

/// Everything the engine predicted for one test event.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredEvent {
    /// Position in the test partition.
    pub index: usize,
    pub new_node: bool,
    pub label: usize,
    pub positive: f64,
    pub negatives: Vec<f64>,
    pub candidates: Vec<f64>,
    pub category: Vec<f64>,
}

/// Scores every test event.
///
/// Works on a copy of `engine`: memory is reset, the training and validation
/// partitions are replayed without prediction, then the test partition is
/// processed chronologically with memory updates but no parameter updates.
/// Negatives and candidates come from a fixed fork of the run seed, so the
/// result depends only on parameters, configuration and data.
pub fn score_test(engine: &Engine, split: &TemporalSplit) -> Result<Vec<ScoredEvent>> {
    let mut e = engine.clone();
    e.reset_state();
    e.reseed_negatives(rng_streams::EVAL);
    let cfg = e.config().clone();
    for part in [&split.train, &split.validation] {
        for b in batches(part.events(), cfg.batch_size) {
            e.process_batch(b, Mode::Replay, 0)?;
        }
    }
    let mut out = Vec::with_capacity(split.test.len());
    for b in batches(split.test.events(), cfg.batch_size) {
        let res = e.process_batch(b, Mode::Eval, cfg.candidates)?;
        let k = res.negatives_per_event;
        for (i, ev) in b.iter().enumerate() {
            out.push(ScoredEvent {
                index: out.len(),
                new_node: split.spec.touches_new_node(ev),
                label: ev.category,
                positive: res.positive[i],
                negatives: res.negative[i * k..(i + 1) * k].to_vec(),
                candidates: res.candidates.get(i).cloned().unwrap_or_default(),
                category: res.category[i].clone(),
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinkMetrics {
    pub auc: f64,
    pub average_precision: f64,
    /// Absent when no candidates were scored.
    pub ranking: Option<RankMetrics>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub mode: EvalMode,
    /// Number of test events in this mode; zero means an empty report.
    pub events: usize,
    pub link: Option<LinkMetrics>,
    pub classes: Option<ClassReport>,
    pub scores: ScoredSet,
}

impl EvalReport {
    pub fn is_empty(&self) -> bool {
        self.events == 0
    }

    pub fn curve(&self) -> Result<Vec<CurvePoint>> {
        curve_points(&self.scores)
    }

    pub fn auc(&self) -> Option<f64> {
        self.link.as_ref().map(|l| l.auc)
    }

    pub fn to_records(&self) -> Vec<Record> {
        let mut out = Vec::new();
        let mut summary = Record::new("summary")
            .with("mode", self.mode)
            .with("status", if self.is_empty() { "empty" } else { "ok" })
            .with("events", self.events);
        if let Some(l) = &self.link {
            summary = summary
                .with_f64("auc", l.auc)
                .with_f64("average_precision", l.average_precision);
            if let Some(r) = &l.ranking {
                summary = summary.with_f64("mrr", r.mrr);
                for (k, h) in &r.hits {
                    summary = summary.with_f64(&format!("hits_at_{k}"), *h);
                }
            }
        }
        if let Some(c) = &self.classes {
            summary = summary
                .with_f64("macro_f1", c.macro_f1)
                .with_f64("macro_recall", c.macro_recall);
        }
        out.push(summary);
        if let Some(c) = &self.classes {
            let na = |v: Option<f64>| v.map_or("N/A".to_string(), crate::report::format_f64);
            for m in &c.classes {
                out.push(
                    Record::new("class")
                        .with("mode", self.mode)
                        .with("class", m.class)
                        .with("support", m.support)
                        .with("tp", m.counts.tp)
                        .with("fp", m.counts.fp)
                        .with("tn", m.counts.tn)
                        .with("fn", m.counts.fn_)
                        .with("accuracy", na(m.accuracy))
                        .with("precision", na(m.precision))
                        .with("recall", na(m.recall))
                        .with("f1", na(m.f1))
                        .with("auc", na(m.auc))
                        .with("tpr", na(m.tpr))
                        .with("tnr", na(m.tnr))
                        .with("fpr", na(m.fpr))
                        .with("fnr", na(m.fnr)),
                );
            }
        }
        out
    }
}

/// Metrics over the scored events belonging to `mode`.
pub fn summarize(scored: &[ScoredEvent], mode: EvalMode, n_categories: usize) -> Result<EvalReport> {
    let keep: Vec<&ScoredEvent> = scored
        .iter()
        .filter(|s| s.new_node == (mode == EvalMode::Inductive))
        .collect();
    let scores = ScoredSet {
        positives: keep.iter().map(|s| s.positive).collect(),
        negatives: keep.iter().flat_map(|s| s.negatives.iter().copied()).collect(),
    };
    if keep.is_empty() {
        return Ok(EvalReport {
            mode,
            events: 0,
            link: None,
            classes: None,
            scores,
        });
    }
    let ranking = if keep.iter().all(|s| !s.candidates.is_empty()) {
        let task = RankTask {
            positives: scores.positives.clone(),
            candidates: keep.iter().map(|s| s.candidates.clone()).collect(),
        };
        Some(mrr_hits(&task, &[1, 3, 10])?)
    } else {
        None
    };
    let link = LinkMetrics {
        auc: auc(&scores)?,
        average_precision: average_precision(&scores)?,
        ranking,
    };
    let probs: Vec<Vec<f64>> = keep.iter().map(|s| s.category.clone()).collect();
    let labels: Vec<usize> = keep.iter().map(|s| s.label).collect();
    Ok(EvalReport {
        mode,
        events: keep.len(),
        link: Some(link),
        classes: Some(per_class_metrics(&probs, &labels, n_categories)?),
        scores,
    })
}

pub fn evaluate(engine: &Engine, split: &TemporalSplit, mode: EvalMode) -> Result<EvalReport> {
    let scored = score_test(engine, split)?;
    summarize(&scored, mode, engine.space().n_categories())
}

/// Both modes from a single replay.
pub fn evaluate_both(engine: &Engine, split: &TemporalSplit) -> Result<[EvalReport; 2]> {
    let scored = score_test(engine, split)?;
    let k = engine.space().n_categories();
    Ok([
        summarize(&scored, EvalMode::Transductive, k)?,
        summarize(&scored, EvalMode::Inductive, k)?,
    ])
}
