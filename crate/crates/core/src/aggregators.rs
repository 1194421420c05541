//! Message aggregation: reduce each node's ordered messages to one vector.
//!
//! All kinds consume a [`MessageBatch`] whose message rows already live on a
//! tape, and return one row per destination node in ascending node order.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::encoders::{AttentionMask, BiGru, Linear, TransformerBlock};
use crate::error::{Error, Result};
use crate::events::NodeId;
use crate::numcore::{Array, ParamId, ParamStore, Rng, Tape, Var};

/// Where a message row came from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MessageMeta {
    /// Node whose memory the message updates.
    pub node: NodeId,
    /// Other endpoint of the interaction; identifies the edge.
    pub other: NodeId,
    pub t: f64,
}

/// Messages for one flush. Row `i` of `messages` is described by `meta[i]`;
/// row order is arrival order.
#[derive(Clone, Debug)]
pub struct MessageBatch {
    pub messages: Var,
    pub meta: Vec<MessageMeta>,
}

impl MessageBatch {
    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    /// Rows per node, ascending node id, each list sorted by time with ties in arrival order.
    pub fn node_groups(&self) -> Vec<(NodeId, Vec<usize>)> {
        let mut groups: BTreeMap<NodeId, Vec<usize>> = BTreeMap::new();
        for (i, m) in self.meta.iter().enumerate() {
            groups.entry(m.node).or_default().push(i);
        }
        groups
            .into_iter()
            .map(|(n, mut rows)| {
                rows.sort_by(|&a, &b| self.meta[a].t.total_cmp(&self.meta[b].t));
                (n, rows)
            })
            .collect()
    }

    /// Rows per `(node, other)` edge, ascending, each list time-sorted like [`Self::node_groups`].
    pub fn edge_groups(&self) -> Vec<((NodeId, NodeId), Vec<usize>)> {
        let mut groups: BTreeMap<(NodeId, NodeId), Vec<usize>> = BTreeMap::new();
        for (i, m) in self.meta.iter().enumerate() {
            groups.entry((m.node, m.other)).or_default().push(i);
        }
        groups
            .into_iter()
            .map(|(k, mut rows)| {
                rows.sort_by(|&a, &b| self.meta[a].t.total_cmp(&self.meta[b].t));
                (k, rows)
            })
            .collect()
    }
}

/// One row per node that received at least one message.
pub struct Aggregated {
    pub nodes: Vec<NodeId>,
    /// `[nodes.len() × width]`
    pub values: Var,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AggregatorKind {
    Last,
    Mean,
    Attention,
    BiGru,
    Bita,
}

impl AggregatorKind {
    pub const ALL: [AggregatorKind; 5] = [
        AggregatorKind::Last,
        AggregatorKind::Mean,
        AggregatorKind::Attention,
        AggregatorKind::BiGru,
        AggregatorKind::Bita,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            AggregatorKind::Last => "last",
            AggregatorKind::Mean => "mean",
            AggregatorKind::Attention => "attention",
            AggregatorKind::BiGru => "bigru",
            AggregatorKind::Bita => "bita",
        }
    }
}

impl fmt::Display for AggregatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for AggregatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AggregatorKind::ALL
            .into_iter()
            .find(|k| k.tag() == s)
            .ok_or_else(|| Error::Config(format!("unknown aggregator {s:?}; expected one of last, mean, attention, bigru, bita")))
    }
}

/// Which edge tokens attend to each other in the BiTA Transformer stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionScope {
    /// Every edge in the batch attends to every other.
    Batch,
    /// Edges attend only to edges of the same destination node.
    SharedNode,
}

impl FromStr for AttentionScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "batch" => Ok(AttentionScope::Batch),
            "node" => Ok(AttentionScope::SharedNode),
            _ => Err(Error::Config(format!("unknown attention scope {s:?}; expected batch or node"))),
        }
    }
}

impl fmt::Display for AttentionScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttentionScope::Batch => "batch",
            AttentionScope::SharedNode => "node",
        })
    }
}

/// Widths needed to build an aggregator.
#[derive(Clone, Debug)]
pub struct AggregatorSpec {
    pub kind: AggregatorKind,
    /// Message width; also the aggregate width for every kind.
    pub d_message: usize,
    /// Hidden width per GRU direction.
    pub d_hidden: usize,
    pub heads: usize,
    pub dropout: f64,
    pub scope: AttentionScope,
}

#[derive(Clone, Debug)]
pub enum Aggregator {
    Last,
    Mean,
    Attention { query: ParamId, key: Linear },
    BiGru { net: BiGru, head: Linear },
    Bita {
        net: BiGru,
        proj: Linear,
        block: TransformerBlock,
        scope: AttentionScope,
    },
}

impl Aggregator {
    pub fn new(params: &mut ParamStore, spec: &AggregatorSpec, rng: &mut Rng) -> Result<Self> {
        let d = spec.d_message;
        Ok(match spec.kind {
            AggregatorKind::Last => Aggregator::Last,
            AggregatorKind::Mean => Aggregator::Mean,
            AggregatorKind::Attention => Aggregator::Attention {
                query: params.add_uniform("agg.query", &[1, d], d, rng),
                key: Linear::without_bias(params, "agg.key", d, d, rng),
            },
            AggregatorKind::BiGru => Aggregator::BiGru {
                net: BiGru::new(params, "agg.bigru", d, spec.d_hidden, rng),
                head: Linear::new(params, "agg.head", 2 * spec.d_hidden, d, rng),
            },
            AggregatorKind::Bita => Aggregator::Bita {
                net: BiGru::new(params, "agg.bigru", d, spec.d_hidden, rng),
                proj: Linear::new(params, "agg.proj", 2 * spec.d_hidden, d, rng),
                block: TransformerBlock::new(params, "agg.transformer", d, spec.heads, 2 * d, spec.dropout, rng)?,
                scope: spec.scope,
            },
        })
    }

    pub fn kind(&self) -> AggregatorKind {
        match self {
            Aggregator::Last => AggregatorKind::Last,
            Aggregator::Mean => AggregatorKind::Mean,
            Aggregator::Attention { .. } => AggregatorKind::Attention,
            Aggregator::BiGru { .. } => AggregatorKind::BiGru,
            Aggregator::Bita { .. } => AggregatorKind::Bita,
        }
    }

    /// Routes to the matching implementation. An empty batch yields no rows.
    pub fn aggregate(&self, tape: &mut Tape, batch: &MessageBatch) -> Result<Option<Aggregated>> {
        if batch.is_empty() {
            return Ok(None);
        }
        let out = match self {
            Aggregator::Last => aggregate_last(tape, batch)?,
            Aggregator::Mean => aggregate_mean(tape, batch)?,
            Aggregator::Attention { query, key } => aggregate_attention(tape, batch, *query, key)?,
            Aggregator::BiGru { net, head } => aggregate_bigru(tape, batch, net, head)?,
            Aggregator::Bita { net, proj, block, scope } => aggregate_bita(tape, batch, net, proj, block, *scope)?,
        };
        Ok(Some(out))
    }
}

fn split_groups(groups: Vec<(NodeId, Vec<usize>)>) -> (Vec<NodeId>, Vec<Vec<usize>>) {
    groups.into_iter().unzip()
}

/// Latest message per node; equal times resolve to the latest arrival.
pub fn aggregate_last(tape: &mut Tape, batch: &MessageBatch) -> Result<Aggregated> {
    let (nodes, groups) = split_groups(batch.node_groups());
    let last: Vec<usize> = groups.iter().map(|g| *g.last().expect("groups are non-empty")).collect();
    let values = tape.rows(batch.messages, &last)?;
    Ok(Aggregated { nodes, values })
}

pub fn aggregate_mean(tape: &mut Tape, batch: &MessageBatch) -> Result<Aggregated> {
    let (nodes, groups) = split_groups(batch.node_groups());
    let values = tape.segment_mean(batch.messages, groups)?;
    Ok(Aggregated { nodes, values })
}

/// `softmax(q · K m_i)`-weighted sum of a node's messages.
pub fn aggregate_attention(tape: &mut Tape, batch: &MessageBatch, query: ParamId, key: &Linear) -> Result<Aggregated> {
    let (nodes, groups) = split_groups(batch.node_groups());
    let width = groups.iter().map(Vec::len).max().unwrap_or(0);
    let mut index = Vec::with_capacity(groups.len() * width);
    let mut allowed = Vec::with_capacity(groups.len() * width);
    for g in &groups {
        for k in 0..width {
            index.push(g.get(k).copied());
            allowed.push(k < g.len());
        }
    }
    let q = tape.param(query);
    let keys = key.forward(tape, batch.messages)?;
    let scores = tape.matmul_nt(keys, q)?;
    let padded = tape.gather_rows(scores, index.clone())?;
    let padded = tape.reshape(padded, &[groups.len(), width])?;
    let weights = tape.masked_softmax(padded, allowed)?;
    let weights = tape.reshape(weights, &[groups.len() * width, 1])?;
    let values = tape.gather_rows(batch.messages, index)?;
    let weighted = tape.scale_rows(values, weights)?;
    let spans: Vec<Vec<usize>> = (0..groups.len()).map(|g| (g * width..(g + 1) * width).collect()).collect();
    let values = tape.segment_sum(weighted, spans)?;
    Ok(Aggregated { nodes, values })
}

/// Packs groups of message rows contiguously; returns the packed matrix and lengths.
fn pack(tape: &mut Tape, messages: Var, groups: &[Vec<usize>]) -> Result<(Var, Vec<usize>)> {
    let order: Vec<usize> = groups.iter().flatten().copied().collect();
    let packed = tape.rows(messages, &order)?;
    Ok((packed, groups.iter().map(Vec::len).collect()))
}

/// Last BiGRU state of each node's sequence, mapped to the message width.
pub fn aggregate_bigru(tape: &mut Tape, batch: &MessageBatch, net: &BiGru, head: &Linear) -> Result<Aggregated> {
    let (nodes, groups) = split_groups(batch.node_groups());
    let (packed, lengths) = pack(tape, batch.messages, &groups)?;
    let states = net.encode_last_packed(tape, packed, &lengths)?;
    let values = head.forward(tape, states)?;
    Ok(Aggregated { nodes, values })
}

/// Edge-level BiGRU, batch-wide self-attention over edges, mean readout per node.
pub fn aggregate_bita(
    tape: &mut Tape,
    batch: &MessageBatch,
    net: &BiGru,
    proj: &Linear,
    block: &TransformerBlock,
    scope: AttentionScope,
) -> Result<Aggregated> {
    let edges = batch.edge_groups();
    let groups: Vec<Vec<usize>> = edges.iter().map(|(_, g)| g.clone()).collect();
    let (packed, lengths) = pack(tape, batch.messages, &groups)?;
    let states = net.encode_last_packed(tape, packed, &lengths)?;
    let tokens = proj.forward(tape, states)?;
    let mask = match scope {
        AttentionScope::Batch => AttentionMask::All,
        AttentionScope::SharedNode => {
            let n = edges.len();
            let mut allow = Vec::with_capacity(n * n);
            for (a, _) in &edges {
                for (b, _) in &edges {
                    allow.push(a.0 == b.0);
                }
            }
            AttentionMask::Pairs(allow)
        }
    };
    let context = block.forward(tape, tokens, &mask)?;

    let mut nodes: Vec<NodeId> = Vec::new();
    let mut readout: Vec<Vec<usize>> = Vec::new();
    for (i, ((node, _), _)) in edges.iter().enumerate() {
        if nodes.last() != Some(node) {
            nodes.push(*node);
            readout.push(Vec::new());
        }
        readout.last_mut().expect("pushed above").push(i);
    }
    let values = tape.segment_mean(context, readout)?;
    Ok(Aggregated { nodes, values })
}

/// Convenience for tests and tools: a batch of constant messages.
pub fn constant_batch(tape: &mut Tape, rows: &[Vec<f64>], meta: Vec<MessageMeta>) -> Result<MessageBatch> {
    let messages = if rows.is_empty() {
        tape.constant(Array::zeros(&[0, 0]))
    } else {
        tape.constant(Array::from_rows(rows)?)
    };
    Ok(MessageBatch { messages, meta })
}
