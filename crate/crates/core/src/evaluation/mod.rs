//! Ranking and classification metrics, the test-partition protocol, and the
//! two audits: predictions must not move when future events are deleted, and
//! should barely move when training batches are visited in another order.

mod audit;
mod metrics;
mod protocol;

pub use audit::{
    causality_audit, order_invariance_audit, select_probes, CausalityReport, OrderReport, Probe,
    AUDIT_SCHEMA_VERSION,
};
pub use metrics::{
    argmax, auc, average_precision, curve_points, mrr_hits, pearson, per_class_metrics, pessimistic_rank,
    ClassMetrics, ClassReport, ConfusionCounts, CurvePoint, RankMetrics, RankTask, ScoredSet,
};
pub use protocol::{
    evaluate, evaluate_both, score_test, summarize, EvalMode, EvalReport, LinkMetrics, ScoredEvent,
    EVAL_SCHEMA_VERSION,
};
