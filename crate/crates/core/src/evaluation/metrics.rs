use std::cmp::Ordering;

use crate::error::{Error, Result};

/// Link scores of true events and of sampled non-events.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoredSet {
    pub positives: Vec<f64>,
    pub negatives: Vec<f64>,
}

/// One true score and its candidate scores per ranked query.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RankTask {
    pub positives: Vec<f64>,
    pub candidates: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankMetrics {
    pub mrr: f64,
    /// `(k, fraction of queries ranked within the top k)`.
    pub hits: Vec<(usize, f64)>,
}

impl RankMetrics {
    pub fn hits_at(&self, k: usize) -> Option<f64> {
        self.hits.iter().find(|(kk, _)| *kk == k).map(|(_, h)| *h)
    }
}

fn check_finite(xs: &[f64], what: &str) -> Result<()> {
    match xs.iter().find(|x| !x.is_finite()) {
        Some(x) => Err(Error::Metric(format!("{what} contain a non-finite score {x}"))),
        None => Ok(()),
    }
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn auc(set: &ScoredSet) -> Result<f64> {
    if set.positives.is_empty() || set.negatives.is_empty() {
        return Err(Error::Metric("AUC needs at least one positive and one negative".into()));
    }
    check_finite(&set.positives, "positives")?;
    check_finite(&set.negatives, "negatives")?;
    let mut neg = set.negatives.clone();
    neg.sort_by(f64::total_cmp);
    // Twice the Mann-Whitney U, kept integral so the count is exact.
    let mut twice_u: u128 = 0;
    for &p in &set.positives {
        let below = neg.partition_point(|&n| n < p);
        let not_above = neg.partition_point(|&n| n <= p);
        twice_u += 2 * below as u128 + (not_above - below) as u128;
    }
    let pairs = set.positives.len() as u128 * set.negatives.len() as u128;
    Ok(twice_u as f64 / (2 * pairs) as f64)
}

/// Mean precision at the rank of each positive, scores descending and ties
/// resolved with negatives first.
pub fn average_precision(set: &ScoredSet) -> Result<f64> {
    if set.positives.is_empty() {
        return Err(Error::Metric("average precision needs at least one positive".into()));
    }
    check_finite(&set.positives, "positives")?;
    check_finite(&set.negatives, "negatives")?;
    let mut items: Vec<(f64, bool)> = set
        .positives
        .iter()
        .map(|&s| (s, true))
        .chain(set.negatives.iter().map(|&s| (s, false)))
        .collect();
    items.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &(_, pos)) in items.iter().enumerate() {
        if pos {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / set.positives.len() as f64)
}

/// 1 plus the number of candidates scoring at least `positive`.
pub fn pessimistic_rank(positive: f64, candidates: &[f64]) -> usize {
    1 + candidates.iter().filter(|&&c| c >= positive).count()
}

pub fn mrr_hits(task: &RankTask, ks: &[usize]) -> Result<RankMetrics> {
    if task.positives.is_empty() {
        return Err(Error::Metric("no ranking queries".into()));
    }
    if task.positives.len() != task.candidates.len() {
        return Err(Error::Metric(format!(
            "{} positives but {} candidate lists",
            task.positives.len(),
            task.candidates.len()
        )));
    }
    check_finite(&task.positives, "positives")?;
    let mut ranks = Vec::with_capacity(task.positives.len());
    for (&p, c) in task.positives.iter().zip(&task.candidates) {
        check_finite(c, "candidates")?;
        ranks.push(pessimistic_rank(p, c));
    }
    let n = ranks.len() as f64;
    Ok(RankMetrics {
        mrr: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
        hits: ks
            .iter()
            .map(|&k| (k, ranks.iter().filter(|&&r| r <= k).count() as f64 / n))
            .collect(),
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// One-vs-rest metrics of one class. Every rate is `None` (reported as N/A)
/// when the class never occurs in the labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassMetrics {
    pub class: usize,
    pub support: usize,
    pub counts: ConfusionCounts,
    pub accuracy: Option<f64>,
    /// Zero when the class is never predicted.
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    /// `None` also when every sample belongs to the class.
    pub auc: Option<f64>,
    pub tpr: Option<f64>,
    pub tnr: Option<f64>,
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassReport {
    pub classes: Vec<ClassMetrics>,
    /// Means over the classes present in the labels.
    pub macro_f1: f64,
    pub macro_recall: f64,
}

/// First index of the largest probability.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in p.iter().enumerate() {
        if x > p[best] {
            best = i;
        }
    }
    best
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Per-class table from predicted distributions; the predicted class is the argmax.
pub fn per_class_metrics(probs: &[Vec<f64>], labels: &[usize], k: usize) -> Result<ClassReport> {
    if k < 2 {
        return Err(Error::Metric("per-class metrics need at least two classes".into()));
    }
    if probs.len() != labels.len() {
        return Err(Error::Metric(format!("{} predictions for {} labels", probs.len(), labels.len())));
    }
    if labels.is_empty() {
        return Err(Error::Metric("no samples".into()));
    }
    for (p, &y) in probs.iter().zip(labels) {
        if p.len() != k || y >= k {
            return Err(Error::Metric(format!("prediction width {} or label {y} does not fit {k} classes", p.len())));
        }
        check_finite(p, "class probabilities")?;
    }
    let predicted: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let n = labels.len();
    let mut classes = Vec::with_capacity(k);
    for c in 0..k {
        let mut m = ConfusionCounts::default();
        for (&y, &yhat) in labels.iter().zip(&predicted) {
            match (y == c, yhat == c) {
                (true, true) => m.tp += 1,
                (false, true) => m.fp += 1,
                (false, false) => m.tn += 1,
                (true, false) => m.fn_ += 1,
            }
        }
        let support = m.tp + m.fn_;
        let row = if support == 0 {
            ClassMetrics {
                class: c,
                support,
                counts: m,
                accuracy: None,
                precision: None,
                recall: None,
                f1: None,
                auc: None,
                tpr: None,
                tnr: None,
                fpr: None,
                fnr: None,
            }
        } else {
            let precision = ratio(m.tp, m.tp + m.fp).unwrap_or(0.0);
            let recall = m.tp as f64 / support as f64;
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            let split = ScoredSet {
                positives: (0..n).filter(|&i| labels[i] == c).map(|i| probs[i][c]).collect(),
                negatives: (0..n).filter(|&i| labels[i] != c).map(|i| probs[i][c]).collect(),
            };
            ClassMetrics {
                class: c,
                support,
                counts: m,
                accuracy: ratio(m.tp + m.tn, n),
                precision: Some(precision),
                recall: Some(recall),
                f1: Some(f1),
                auc: if split.negatives.is_empty() { None } else { Some(auc(&split)?) },
                tpr: Some(recall),
                tnr: ratio(m.tn, m.tn + m.fp),
                fpr: ratio(m.fp, m.tn + m.fp),
                fnr: Some(m.fn_ as f64 / support as f64),
            }
        };
        classes.push(row);
    }
    let present: Vec<&ClassMetrics> = classes.iter().filter(|c| c.support > 0).collect();
    let mean = |f: fn(&ClassMetrics) -> Option<f64>| {
        present.iter().filter_map(|c| f(c)).sum::<f64>() / present.len() as f64
    };
    Ok(ClassReport {
        macro_f1: mean(|c| c.f1),
        macro_recall: mean(|c| c.recall),
        classes,
    })
}

/// One threshold of the ROC and precision-recall curves.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
    pub precision: f64,
}

/// Curve points at every distinct score, highest threshold first, predicting
/// positive for scores at or above the threshold.
pub fn curve_points(set: &ScoredSet) -> Result<Vec<CurvePoint>> {
    if set.positives.is_empty() || set.negatives.is_empty() {
        return Err(Error::Metric("curves need at least one positive and one negative".into()));
    }
    check_finite(&set.positives, "positives")?;
    check_finite(&set.negatives, "negatives")?;
    let mut items: Vec<(f64, bool)> = set
        .positives
        .iter()
        .map(|&s| (s, true))
        .chain(set.negatives.iter().map(|&s| (s, false)))
        .collect();
    items.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (np, nn) = (set.positives.len() as f64, set.negatives.len() as f64);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut out = Vec::new();
    for (i, &(s, pos)) in items.iter().enumerate() {
        if pos {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_tie = items.get(i + 1).is_none_or(|next| next.0.total_cmp(&s) != Ordering::Equal);
        if last_of_tie {
            out.push(CurvePoint {
                threshold: s,
                fpr: fp as f64 / nn,
                tpr: tp as f64 / np,
                precision: tp as f64 / (tp + fp) as f64,
            });
        }
    }
    Ok(out)
}

/// Pearson correlation; `None` when either side has zero variance, unless
/// the two series are identical.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.is_empty() {
        return None;
    }
    if a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()) {
        return Some(1.0);
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}
