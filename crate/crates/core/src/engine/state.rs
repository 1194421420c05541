use std::collections::VecDeque;

use crate::events::NodeId;
use crate::numcore::Array;

/// One side of a past interaction as seen from the node that will receive it.
#[derive(Clone, Debug, PartialEq)]
pub struct RawMessage {
    pub other: NodeId,
    pub t: f64,
    /// `t` minus the receiving node's last memory update when the message was stored.
    pub dt: f64,
    pub features: Vec<f64>,
}

/// Per-node recurrent state plus the time of each node's last update.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeMemory {
    state: Array,
    last_update: Vec<f64>,
}

impl NodeMemory {
    /// Zero rows and every `last_update` at the stream epoch.
    pub fn new(n_nodes: usize, d_memory: usize) -> Self {
        NodeMemory {
            state: Array::zeros(&[n_nodes, d_memory]),
            last_update: vec![0.0; n_nodes],
        }
    }

    pub fn from_parts(state: Array, last_update: Vec<f64>) -> Self {
        NodeMemory { state, last_update }
    }

    pub fn state(&self) -> &Array {
        &self.state
    }

    pub fn n_nodes(&self) -> usize {
        self.last_update.len()
    }

    pub fn width(&self) -> usize {
        self.state.cols()
    }

    pub fn row(&self, n: NodeId) -> &[f64] {
        self.state.row_slice(n.0)
    }

    pub fn last_update(&self, n: NodeId) -> f64 {
        self.last_update[n.0]
    }

    pub fn last_updates(&self) -> &[f64] {
        &self.last_update
    }

    /// Writes a new state row. `last_update` only moves forward.
    pub fn update(&mut self, n: NodeId, row: &[f64], t: f64) {
        let d = self.width();
        self.state.data_mut()[n.0 * d..(n.0 + 1) * d].copy_from_slice(row);
        if t > self.last_update[n.0] {
            self.last_update[n.0] = t;
        }
    }
}

/// At most one pending raw message per node, waiting for the next flush.
#[derive(Clone, Debug, PartialEq)]
pub struct RawMessageStore {
    slots: Vec<Option<RawMessage>>,
}

impl RawMessageStore {
    pub fn new(n_nodes: usize) -> Self {
        RawMessageStore {
            slots: vec![None; n_nodes],
        }
    }

    /// Replaces whatever `n` had pending.
    pub fn put(&mut self, n: NodeId, m: RawMessage) {
        self.slots[n.0] = Some(m);
    }

    pub fn get(&self, n: NodeId) -> Option<&RawMessage> {
        self.slots[n.0].as_ref()
    }

    /// Nodes with a pending message, ascending.
    pub fn pending(&self) -> Vec<NodeId> {
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_some())
            .map(|(i, _)| NodeId(i))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&mut self) {
        self.slots.iter_mut().for_each(|s| *s = None);
    }

    pub fn n_nodes(&self) -> usize {
        self.slots.len()
    }
}

/// The `window` most recent stored messages of every node, oldest first.
#[derive(Clone, Debug, PartialEq)]
pub struct History {
    window: usize,
    per_node: Vec<VecDeque<RawMessage>>,
}

impl History {
    pub fn new(n_nodes: usize, window: usize) -> Self {
        History {
            window,
            per_node: vec![VecDeque::new(); n_nodes],
        }
    }

    pub fn push(&mut self, n: NodeId, m: RawMessage) {
        let q = &mut self.per_node[n.0];
        if q.len() == self.window {
            q.pop_front();
        }
        q.push_back(m);
    }

    pub fn of(&self, n: NodeId) -> &VecDeque<RawMessage> {
        &self.per_node[n.0]
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn n_nodes(&self) -> usize {
        self.per_node.len()
    }
}
