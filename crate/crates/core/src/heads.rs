//! Link-existence and category heads, and the losses that train them.

use crate::encoders::Linear;
use crate::error::{Error, Result};
use crate::numcore::{Array, ParamStore, Rng, Tape, Var};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside every loss.
pub const PROB_CLAMP: f64 = 1e-12;

/// Two-layer map over `concat(embed_i, embed_j)`: affine, ReLU, dropout, affine.
#[derive(Clone, Debug)]
pub struct PairMlp {
    pub hidden: Linear,
    pub out: Linear,
    pub dropout: f64,
}

impl PairMlp {
    pub fn new(params: &mut ParamStore, name: &str, d_node: usize, d_out: usize, dropout: f64, rng: &mut Rng) -> Self {
        PairMlp {
            hidden: Linear::new(params, &format!("{name}.hidden"), 2 * d_node, d_node, rng),
            out: Linear::new(params, &format!("{name}.out"), d_node, d_out, rng),
            dropout,
        }
    }

    pub fn forward(&self, tape: &mut Tape, embed_i: Var, embed_j: Var) -> Result<Var> {
        let x = tape.concat_cols(&[embed_i, embed_j])?;
        let h = self.hidden.forward(tape, x)?;
        let h = tape.relu(h);
        let h = tape.dropout(h, self.dropout);
        self.out.forward(tape, h)
    }
}

/// Scores a directed attacker → victim pair. Not symmetric in its arguments.
#[derive(Clone, Debug)]
pub struct LinkHead(pub PairMlp);

impl LinkHead {
    pub fn new(params: &mut ParamStore, d_node: usize, dropout: f64, rng: &mut Rng) -> Self {
        LinkHead(PairMlp::new(params, "link", d_node, 1, dropout, rng))
    }

    /// `[n × 1]` logits.
    pub fn logits(&self, tape: &mut Tape, embed_i: Var, embed_j: Var) -> Result<Var> {
        self.0.forward(tape, embed_i, embed_j)
    }

    /// `[n × 1]` probabilities.
    pub fn predict(&self, tape: &mut Tape, embed_i: Var, embed_j: Var) -> Result<Var> {
        let l = self.logits(tape, embed_i, embed_j)?;
        Ok(tape.sigmoid(l))
    }
}

/// Predicts the attack category of a pair as a distribution over `K` classes.
#[derive(Clone, Debug)]
pub struct CategoryHead(pub PairMlp);

impl CategoryHead {
    pub fn new(params: &mut ParamStore, d_node: usize, n_categories: usize, dropout: f64, rng: &mut Rng) -> Self {
        CategoryHead(PairMlp::new(params, "category", d_node, n_categories, dropout, rng))
    }

    pub fn n_categories(&self) -> usize {
        self.0.out.d_out
    }

    /// `[n × K]` probabilities, rows summing to one.
    pub fn predict(&self, tape: &mut Tape, embed_i: Var, embed_j: Var) -> Result<Var> {
        let l = self.0.forward(tape, embed_i, embed_j)?;
        tape.softmax(l)
    }
}

/// Class weights `alpha` and focusing exponent `gamma`.
#[derive(Clone, Debug, PartialEq)]
pub struct FocalLossCfg {
    pub alpha: Vec<f64>,
    pub gamma: f64,
}

impl FocalLossCfg {
    pub fn new(alpha: Vec<f64>, gamma: f64) -> Result<Self> {
        if alpha.iter().any(|&a| !(a > 0.0)) {
            return Err(Error::Config("focal class weights must be positive".into()));
        }
        if !(gamma >= 0.0) {
            return Err(Error::Config(format!("focal gamma must be non-negative, got {gamma}")));
        }
        Ok(FocalLossCfg { alpha, gamma })
    }

    pub fn uniform(k: usize, gamma: f64) -> Self {
        FocalLossCfg {
            alpha: vec![1.0; k],
            gamma,
        }
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// `-(y ln p + (1 - y) ln(1 - p))` with clamping.
pub fn bce_loss(prob: f64, label: f64) -> f64 {
    let p = clamp_prob(prob);
    -(label * p.ln() + (1.0 - label) * (1.0 - p).ln())
}

/// `-sum_k alpha_k (1 - p_k)^gamma y_k ln p_k` for a one-hot `y`.
pub fn focal_loss(probs: &[f64], one_hot: &[f64], cfg: &FocalLossCfg) -> Result<f64> {
    let k = one_hot_index(one_hot)?;
    if probs.len() != one_hot.len() || cfg.alpha.len() != one_hot.len() {
        return Err(Error::Dimension(format!(
            "focal loss over {} probabilities, {} labels, {} weights",
            probs.len(),
            one_hot.len(),
            cfg.alpha.len()
        )));
    }
    let p = clamp_prob(probs[k]);
    Ok(-cfg.alpha[k] * (1.0 - p).powf(cfg.gamma) * p.ln())
}

fn one_hot_index(y: &[f64]) -> Result<usize> {
    let ones: Vec<usize> = (0..y.len()).filter(|&i| y[i] == 1.0).collect();
    if ones.len() != 1 || y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Contract(format!("label {y:?} is not one-hot")));
    }
    Ok(ones[0])
}

/// Mean binary cross-entropy of `[n × 1]` probabilities against 0/1 labels.
pub fn bce_mean(tape: &mut Tape, probs: Var, labels: &[f64]) -> Result<Var> {
    let n = tape.value(probs).len();
    if labels.len() != n {
        return Err(Error::Dimension(format!("{n} probabilities, {} labels", labels.len())));
    }
    let p = tape.clamp(probs, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let q = tape.one_minus(p);
    let lp = tape.log(p)?;
    let lq = tape.log(q)?;
    let y = tape.constant(Array::new(tape.value(probs).shape(), labels.to_vec())?);
    let ny = tape.constant(Array::new(tape.value(probs).shape(), labels.iter().map(|v| 1.0 - v).collect())?);
    let a = tape.mul(y, lp)?;
    let b = tape.mul(ny, lq)?;
    let s = tape.add(a, b)?;
    let m = tape.mean(s)?;
    Ok(tape.scale(m, -1.0))
}

/// Mean focal loss of `[n × K]` probabilities against class indices.
pub fn focal_mean(tape: &mut Tape, probs: Var, labels: &[usize], cfg: &FocalLossCfg) -> Result<Var> {
    let k = tape.value(probs).cols();
    if labels.len() != tape.value(probs).rows() || cfg.alpha.len() != k {
        return Err(Error::Dimension(format!(
            "focal loss over {:?} with {} labels and {} weights",
            tape.value(probs).shape(),
            labels.len(),
            cfg.alpha.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&c| c >= k) {
        return Err(Error::Contract(format!("category {bad} out of {k}")));
    }
    let p = tape.pick_cols(probs, labels.to_vec())?;
    let p = tape.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let lp = tape.log(p)?;
    let term = if cfg.gamma == 0.0 {
        lp
    } else {
        let q = tape.one_minus(p);
        let w = tape.pow(q, cfg.gamma)?;
        tape.mul(w, lp)?
    };
    let alpha = tape.constant(Array::new(&[labels.len(), 1], labels.iter().map(|&c| cfg.alpha[c]).collect())?);
    let weighted = tape.mul(alpha, term)?;
    let m = tape.mean(weighted)?;
    Ok(tape.scale(m, -1.0))
}

/// `link + lambda * category`; with `lambda == 0` the link loss is returned as is.
pub fn joint_loss(tape: &mut Tape, link: Var, category: Var, lambda: f64) -> Result<Var> {
    if lambda == 0.0 {
        return Ok(link);
    }
    let c = tape.scale(category, lambda);
    tape.add(link, c)
}

/// Inverse-frequency weights `N / (K * count_k)`, rescaled to mean one.
pub fn class_weights(counts: &[usize], names: &[String]) -> Result<Vec<f64>> {
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        let name = names.get(k).map_or("?", String::as_str);
        return Err(Error::Config(format!(
            "category {name:?} never occurs in the training partition; \
             rebalance the stream or drop the category before training"
        )));
    }
    let n: usize = counts.iter().sum();
    let k = counts.len() as f64;
    let raw: Vec<f64> = counts.iter().map(|&c| n as f64 / (k * c as f64)).collect();
    let mean = raw.iter().sum::<f64>() / k;
    Ok(raw.into_iter().map(|w| w / mean).collect())
}
