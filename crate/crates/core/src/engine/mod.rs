//! The streaming loop: raw message store, node memory, and batched training
//! and inference.
//!
//! Each call to [`Engine::process_batch`] runs, in order:
//!
//! 1. flush: messages built from the raw store (and each pending node's recent
//!    history) are aggregated and fed through the memory GRU, then the store is cleared;
//! 2. embed: endpoints and sampled negatives are embedded from the fresh memory;
//! 3. predict: link and category heads score the pairs;
//! 4. in training mode, the joint loss is minimized by one Adam step;
//! 5. store: the batch's own interactions enter the raw store.
//!
//! Because step 5 comes last, no event can influence its own prediction or
//! that of any event in the same batch.

mod checkpoint;
mod state;
mod train;

use std::collections::HashMap;

pub use state::{History, NodeMemory, RawMessage, RawMessageStore};
pub use train::{batches, train, train_with_order_seed, EarlyStopping, EpochLog, TrainLog};

use crate::aggregators::{Aggregator, AggregatorKind, AggregatorSpec, MessageBatch, MessageMeta};
use crate::config::{Config, TimeMode};
use crate::encoders::{GruCell, Linear, MessageFunction, TimeEncoder};
use crate::error::{Error, Result};
use crate::events::{sample_candidates, sample_negative, EventStream, NodeId, TemporalEvent};
use crate::heads::{bce_mean, focal_mean, joint_loss, CategoryHead, FocalLossCfg, LinkHead};
use crate::numcore::{Adam, Array, Gradients, ParamStore, Rng, Tape, Var};

/// Stream ids for [`Rng::fork`]; every consumer of randomness owns one.
pub mod rng_streams {
    pub const INIT: u64 = 1;
    pub const NEGATIVES: u64 = 2;
    pub const DROPOUT: u64 = 3;
    pub const ORDER: u64 = 4;
    pub const EVAL: u64 = 5;
    pub const MASK: u64 = 6;
    pub const BALANCE: u64 = 7;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Predict, compute the loss and take an optimizer step.
    Train,
    /// Predict and compute the loss; parameters untouched.
    Eval,
    /// Memory bookkeeping only: flush and store, no predictions.
    Replay,
}

/// Deliberate defects used to prove that the audits catch them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Mutation {
    #[default]
    None,
    /// Stores and flushes the current batch before predicting it.
    FlushBeforePredict,
}

/// Steps of one batch, recorded in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Flush,
    Embed,
    Predict,
    Loss,
    Step,
    Store,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub link: f64,
    pub category: f64,
}

/// Predictions for one batch, in event order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BatchOutput {
    /// Link probability of each event's own pair.
    pub positive: Vec<f64>,
    /// `negatives_per_event` probabilities per event, event-major.
    pub negative: Vec<f64>,
    pub negative_nodes: Vec<NodeId>,
    pub negatives_per_event: usize,
    /// Category distribution per event.
    pub category: Vec<Vec<f64>>,
    /// Link probabilities of candidate victims per event (empty unless requested).
    pub candidates: Vec<Vec<f64>>,
    pub loss: Option<LossParts>,
}

/// All learnable blocks and their parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub params: ParamStore,
    pub time: TimeEncoder,
    pub message: MessageFunction,
    pub aggregator: Aggregator,
    pub updater: GruCell,
    pub embed: Linear,
    pub link: LinkHead,
    pub category: CategoryHead,
}

impl Model {
    pub fn new(cfg: &Config, feature_width: usize, n_categories: usize) -> Result<Model> {
        cfg.validate()?;
        let mut rng = Rng::new(cfg.seed).fork(rng_streams::INIT);
        let mut params = ParamStore::new();
        let time = TimeEncoder::new(&mut params, "time", cfg.d_time);
        let message = MessageFunction::new(
            &mut params,
            "message",
            [cfg.d_memory, cfg.d_memory, feature_width, cfg.d_time],
            cfg.d_message,
            &mut rng,
        );
        let aggregator = Aggregator::new(
            &mut params,
            &AggregatorSpec {
                kind: cfg.aggregator,
                d_message: cfg.d_message,
                d_hidden: cfg.d_gru,
                heads: cfg.heads,
                dropout: cfg.dropout,
                scope: cfg.scope,
            },
            &mut rng,
        )?;
        let updater = GruCell::new(&mut params, "memory", cfg.d_message, cfg.d_memory, &mut rng);
        let embed = Linear::new(&mut params, "embed", cfg.d_memory + cfg.d_time, cfg.d_node, &mut rng);
        let link = LinkHead::new(&mut params, cfg.d_node, cfg.dropout, &mut rng);
        let category = CategoryHead::new(&mut params, cfg.d_node, n_categories, cfg.dropout, &mut rng);
        Ok(Model {
            params,
            time,
            message,
            aggregator,
            updater,
            embed,
            link,
            category,
        })
    }
}

/// Everything that evolves while a stream is processed.
#[derive(Clone, Debug, PartialEq)]
pub struct EngineState {
    pub memory: NodeMemory,
    pub store: RawMessageStore,
    pub history: History,
    /// Latest event time processed so far.
    pub clock: f64,
    /// Batches processed since construction.
    pub batches: u64,
    pub negatives_rng: Rng,
    pub dropout_rng: Rng,
}

#[derive(Clone, Debug)]
pub struct Engine {
    cfg: Config,
    /// Node partitions and category names; holds no events.
    space: EventStream,
    pub model: Model,
    optimizer: Adam,
    focal: FocalLossCfg,
    state: EngineState,
    mutation: Mutation,
    allow_unordered: bool,
    phases: Vec<Phase>,
}

struct Flushed {
    nodes: Vec<NodeId>,
    /// `[nodes.len() × d_memory]`, differentiable.
    memory: Var,
}

struct Forward {
    output: BatchOutput,
    grads: Option<Gradients>,
    dropout_rng: Option<Rng>,
}

impl Engine {
    /// Builds an engine for streams shaped like `space` (node partitions,
    /// feature width, categories). Events in `space` are ignored.
    pub fn new(cfg: &Config, space: &EventStream) -> Result<Engine> {
        let model = Model::new(cfg, space.feature_width(), space.n_categories())?;
        let optimizer = Adam::new(&model.params, cfg.lr);
        let base = Rng::new(cfg.seed);
        let n = space.node_count();
        Ok(Engine {
            cfg: cfg.clone(),
            space: space.with_events(Vec::new())?,
            model,
            optimizer,
            focal: FocalLossCfg::uniform(space.n_categories(), cfg.gamma),
            state: EngineState {
                memory: NodeMemory::new(n, cfg.d_memory),
                store: RawMessageStore::new(n),
                history: History::new(n, cfg.window),
                clock: f64::NEG_INFINITY,
                batches: 0,
                negatives_rng: base.fork(rng_streams::NEGATIVES),
                dropout_rng: base.fork(rng_streams::DROPOUT),
            },
            mutation: Mutation::None,
            allow_unordered: false,
            phases: Vec::new(),
        })
    }

    pub fn config(&self) -> &Config {
        &self.cfg
    }

    pub fn space(&self) -> &EventStream {
        &self.space
    }

    pub fn state(&self) -> &EngineState {
        &self.state
    }

    pub fn optimizer(&self) -> &Adam {
        &self.optimizer
    }

    pub fn kind(&self) -> AggregatorKind {
        self.model.aggregator.kind()
    }

    pub fn focal(&self) -> &FocalLossCfg {
        &self.focal
    }

    /// Sets the per-class weights of the category loss.
    pub fn set_class_weights(&mut self, alpha: Vec<f64>) -> Result<()> {
        self.focal = FocalLossCfg::new(alpha, self.cfg.gamma)?;
        Ok(())
    }

    pub fn set_mutation(&mut self, m: Mutation) {
        self.mutation = m;
    }

    pub fn mutation(&self) -> Mutation {
        self.mutation
    }

    /// Lets batches arrive earlier than already processed ones (shuffled-order
    /// training). Elapsed times are clamped at zero in this mode.
    pub fn set_allow_unordered(&mut self, allow: bool) {
        self.allow_unordered = allow;
    }

    /// Phases of the most recent [`Engine::process_batch`] call.
    pub fn phases(&self) -> &[Phase] {
        &self.phases
    }

    /// Zero memory, empty store and history, clock before the epoch.
    /// Generators keep their positions.
    pub fn reset_state(&mut self) {
        let n = self.space.node_count();
        self.state.memory = NodeMemory::new(n, self.cfg.d_memory);
        self.state.store = RawMessageStore::new(n);
        self.state.history = History::new(n, self.cfg.window);
        self.state.clock = f64::NEG_INFINITY;
    }

    /// Restarts negative sampling from a fixed fork of the run seed.
    pub fn reseed_negatives(&mut self, stream: u64) {
        self.state.negatives_rng = Rng::new(self.cfg.seed).fork(stream);
    }

    /// Embedding of `node` at time `t` from its current memory.
    pub fn compute_embedding(&self, node: NodeId, t: f64) -> Result<Vec<f64>> {
        self.check_node(node)?;
        let mut tape = Tape::new(&self.model.params);
        let mem = tape.constant(Array::new(&[1, self.cfg.d_memory], self.state.memory.row(node).to_vec())?);
        let dt = self.time_input(node, t, None)?;
        let e = embed(&mut tape, &self.model, mem, vec![dt])?;
        Ok(tape.value(e).data().to_vec())
    }

    fn check_node(&self, n: NodeId) -> Result<()> {
        if n.0 >= self.space.node_count() {
            return Err(Error::Dimension(format!(
                "node {n} outside this engine's {} nodes",
                self.space.node_count()
            )));
        }
        Ok(())
    }

    /// Encoder input for `node` queried at `t`, given its (possibly just refreshed) last update.
    fn time_input(&self, node: NodeId, t: f64, last: Option<f64>) -> Result<f64> {
        let last = last.unwrap_or_else(|| self.state.memory.last_update(node));
        let dt = t - last;
        // The mutation must reach the audit, so it bypasses this guard.
        if dt < 0.0 && !self.allow_unordered && self.mutation == Mutation::None {
            return Err(Error::Causality(format!(
                "embedding of {node} requested at t={t} but its memory was updated at t={last}"
            )));
        }
        Ok(match self.cfg.time_mode {
            TimeMode::Delta => dt.max(0.0),
            TimeMode::Absolute => t,
        })
    }

    fn check_batch(&self, events: &[TemporalEvent]) -> Result<()> {
        let width = self.space.feature_width();
        let k = self.space.n_categories();
        for (i, e) in events.iter().enumerate() {
            self.check_node(e.src)?;
            self.check_node(e.dst)?;
            if !self.space.is_attacker(e.src) || !self.space.is_victim(e.dst) {
                return Err(Error::Contract(format!("event {i} is not attacker -> victim")));
            }
            if e.features.len() != width {
                return Err(Error::Dimension(format!(
                    "event {i} has {} features, engine expects {width}",
                    e.features.len()
                )));
            }
            if e.category >= k {
                return Err(Error::Contract(format!("event {i} has category {} of {k}", e.category)));
            }
            if i > 0 && e.t < events[i - 1].t {
                return Err(Error::Causality(format!("batch is not sorted by time at event {i}")));
            }
        }
        if let Some(first) = events.first() {
            if first.t < self.state.clock && !self.allow_unordered {
                return Err(Error::Causality(format!(
                    "batch starts at t={} but events up to t={} were already processed",
                    first.t, self.state.clock
                )));
            }
        }
        Ok(())
    }

    /// Runs one batch. `candidates` victims per event are scored for ranking
    /// metrics (ignored in training).
    pub fn process_batch(&mut self, events: &[TemporalEvent], mode: Mode, candidates: usize) -> Result<BatchOutput> {
        self.phases.clear();
        self.check_batch(events)?;
        if events.is_empty() {
            return Ok(BatchOutput::default());
        }
        let leak = self.mutation == Mutation::FlushBeforePredict;
        if leak {
            self.store_batch(events);
        }

        let k = self.cfg.negatives;
        let c = if mode == Mode::Train { 0 } else { candidates };
        let mut negative_nodes = Vec::with_capacity(events.len() * k);
        let mut candidate_nodes = Vec::with_capacity(events.len());
        for e in events {
            for _ in 0..k {
                negative_nodes.push(sample_negative(e.dst, &self.space, &mut self.state.negatives_rng)?);
            }
            if c > 0 {
                candidate_nodes.push(sample_candidates(e.dst, &self.space, c, &mut self.state.negatives_rng)?);
            }
        }

        let fwd = self.forward(events, mode, negative_nodes, candidate_nodes)?;
        if let Some(rng) = fwd.dropout_rng {
            self.state.dropout_rng = rng;
        }
        if let Some(grads) = fwd.grads {
            let mut owned: Vec<_> = grads.params().into_iter().map(|(id, g)| (id, g.clone())).collect();
            let clip = self.cfg.grad_clip;
            let norm = grads.param_norm();
            if clip > 0.0 && norm > clip {
                for (_, g) in &mut owned {
                    g.data_mut().iter_mut().for_each(|x| *x *= clip / norm);
                }
            }
            self.optimizer.step_with(&mut self.model.params, &owned);
            self.phases.push(Phase::Step);
        }
        if !leak {
            self.store_batch(events);
        }
        self.state.batches += 1;
        let last_t = events.last().expect("non-empty").t;
        if last_t > self.state.clock {
            self.state.clock = last_t;
        }
        Ok(fwd.output)
    }

    /// Steps 1 to 4 on one tape. Memory rows of flushed nodes are written back
    /// as soon as they are computed; the optimizer step is left to the caller.
    fn forward(
        &mut self,
        events: &[TemporalEvent],
        mode: Mode,
        negative_nodes: Vec<NodeId>,
        candidate_nodes: Vec<Vec<NodeId>>,
    ) -> Result<Forward> {
        let params = &self.model.params;
        let mut tape = if mode == Mode::Train {
            Tape::training(params, self.state.dropout_rng.clone())
        } else {
            Tape::new(params)
        };

        let flushed = flush(&mut tape, &self.model, &mut self.state, &self.cfg)?;
        self.phases.push(Phase::Flush);
        if mode == Mode::Replay {
            return Ok(Forward {
                output: BatchOutput::default(),
                grads: None,
                dropout_rng: None,
            });
        }

        // Query list: sources, then destinations, then negatives, then candidates.
        let n = events.len();
        let k = self.cfg.negatives;
        let mut q_nodes: Vec<NodeId> = Vec::with_capacity(n * (2 + k));
        let mut q_times: Vec<f64> = Vec::with_capacity(n * (2 + k));
        for e in events {
            q_nodes.push(e.src);
            q_times.push(e.t);
        }
        for e in events {
            q_nodes.push(e.dst);
            q_times.push(e.t);
        }
        for (i, &v) in negative_nodes.iter().enumerate() {
            q_nodes.push(v);
            q_times.push(events[i / k].t);
        }
        for (i, cands) in candidate_nodes.iter().enumerate() {
            for &v in cands {
                q_nodes.push(v);
                q_times.push(events[i].t);
            }
        }

        let mem = query_memory(&mut tape, &self.state.memory, flushed.as_ref(), &q_nodes)?;
        let dts = q_nodes
            .iter()
            .zip(&q_times)
            .map(|(&v, &t)| self.time_input(v, t, None))
            .collect::<Result<Vec<f64>>>()?;
        let emb = embed(&mut tape, &self.model, mem, dts)?;
        self.phases.push(Phase::Embed);

        // Pair rows: positives, negatives, candidates.
        let mut left = Vec::with_capacity(q_nodes.len());
        let mut right = Vec::with_capacity(q_nodes.len());
        for i in 0..n {
            left.push(i);
            right.push(n + i);
        }
        for j in 0..n * k {
            left.push(j / k);
            right.push(2 * n + j);
        }
        let mut next = 2 * n + n * k;
        for (i, cands) in candidate_nodes.iter().enumerate() {
            for _ in cands {
                left.push(i);
                right.push(next);
                next += 1;
            }
        }
        let l = tape.rows(emb, &left)?;
        let r = tape.rows(emb, &right)?;
        let link = self.model.link.predict(&mut tape, l, r)?;
        let src = tape.rows(emb, &left[..n])?;
        let dst = tape.rows(emb, &right[..n])?;
        let cat = self.model.category.predict(&mut tape, src, dst)?;
        self.phases.push(Phase::Predict);

        let scored: Vec<usize> = (0..n * (1 + k)).collect();
        let link_scored = tape.rows(link, &scored)?;
        let mut labels = vec![1.0; n];
        labels.resize(n * (1 + k), 0.0);
        let link_loss = bce_mean(&mut tape, link_scored, &labels)?;
        let categories: Vec<usize> = events.iter().map(|e| e.category).collect();
        let cat_loss = focal_mean(&mut tape, cat, &categories, &self.focal)?;
        let total = joint_loss(&mut tape, link_loss, cat_loss, self.cfg.lambda)?;
        let loss = LossParts {
            total: tape.value(total).item(),
            link: tape.value(link_loss).item(),
            category: tape.value(cat_loss).item(),
        };
        self.phases.push(Phase::Loss);
        if !loss.total.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss (link {}, category {}) on batch {} spanning t={}..{}",
                loss.link,
                loss.category,
                self.state.batches,
                events[0].t,
                events[n - 1].t
            )));
        }

        let probs = tape.value(link).data();
        let mut output = BatchOutput {
            positive: probs[..n].to_vec(),
            negative: probs[n..n + n * k].to_vec(),
            negative_nodes,
            negatives_per_event: k,
            category: (0..n).map(|i| tape.value(cat).row_slice(i).to_vec()).collect(),
            candidates: Vec::with_capacity(candidate_nodes.len()),
            loss: Some(loss),
        };
        let mut at = n + n * k;
        for cands in &candidate_nodes {
            output.candidates.push(probs[at..at + cands.len()].to_vec());
            at += cands.len();
        }

        let grads = if mode == Mode::Train {
            Some(tape.backward(total)?)
        } else {
            None
        };
        Ok(Forward {
            output,
            grads,
            dropout_rng: tape.take_rng(),
        })
    }

    /// Step 5: each endpoint's slot takes its latest interaction in the batch.
    fn store_batch(&mut self, events: &[TemporalEvent]) {
        for e in events {
            for (node, other) in [(e.src, e.dst), (e.dst, e.src)] {
                let dt = (e.t - self.state.memory.last_update(node)).max(0.0);
                let m = RawMessage {
                    other,
                    t: e.t,
                    dt,
                    features: e.features.clone(),
                };
                self.state.history.push(node, m.clone());
                self.state.store.put(node, m);
            }
        }
        self.phases.push(Phase::Store);
    }
}

/// Step 1: aggregate every pending node's messages and update its memory.
fn flush(tape: &mut Tape, model: &Model, state: &mut EngineState, cfg: &Config) -> Result<Option<Flushed>> {
    let pending = state.store.pending();
    if pending.is_empty() {
        return Ok(None);
    }
    let d = cfg.d_memory;
    let only_last = model.aggregator.kind() == AggregatorKind::Last;
    let mut mem_u = Vec::new();
    let mut mem_v = Vec::new();
    let mut feats = Vec::new();
    let mut times = Vec::new();
    let mut meta = Vec::new();
    let mut slot_t = Vec::with_capacity(pending.len());
    for &n in &pending {
        let slot = state.store.get(n).expect("pending nodes have a slot");
        slot_t.push(slot.t);
        let seq: Vec<&RawMessage> = if only_last {
            // Only the latest message can matter; skip building the rest.
            vec![slot]
        } else {
            state.history.of(n).iter().collect()
        };
        for m in seq {
            mem_u.extend_from_slice(state.memory.row(n));
            mem_v.extend_from_slice(state.memory.row(m.other));
            feats.extend_from_slice(&m.features);
            times.push(match cfg.time_mode {
                TimeMode::Delta => m.dt,
                TimeMode::Absolute => m.t,
            });
            meta.push(MessageMeta {
                node: n,
                other: m.other,
                t: m.t,
            });
        }
    }
    let rows = meta.len();
    let width = feats.len() / rows;
    let u = tape.constant(Array::new(&[rows, d], mem_u)?);
    let v = tape.constant(Array::new(&[rows, d], mem_v)?);
    let f = tape.constant(Array::new(&[rows, width], feats)?);
    let tc = model.time.encode(tape, times)?;
    let messages = model.message.build(tape, u, v, f, tc)?;
    let agg = model
        .aggregator
        .aggregate(tape, &MessageBatch { messages, meta })?
        .expect("pending nodes produce messages");

    let mut prev = Vec::with_capacity(agg.nodes.len() * d);
    for &n in &agg.nodes {
        prev.extend_from_slice(state.memory.row(n));
    }
    let h = tape.constant(Array::new(&[agg.nodes.len(), d], prev)?);
    let memory = model.updater.step(tape, agg.values, h)?;

    debug_assert_eq!(agg.nodes, pending);
    let fresh = tape.value(memory);
    for (i, &n) in agg.nodes.iter().enumerate() {
        state.memory.update(n, fresh.row_slice(i), slot_t[i]);
    }
    state.store.clear();
    Ok(Some(Flushed {
        nodes: agg.nodes,
        memory,
    }))
}

/// Memory rows for `nodes`: fresh (differentiable) rows for flushed nodes,
/// constants for the rest.
fn query_memory(tape: &mut Tape, memory: &NodeMemory, flushed: Option<&Flushed>, nodes: &[NodeId]) -> Result<Var> {
    let d = memory.width();
    let mut slot: HashMap<NodeId, usize> = HashMap::new();
    let mut base = 0;
    if let Some(f) = flushed {
        for (i, &n) in f.nodes.iter().enumerate() {
            slot.insert(n, i);
        }
        base = f.nodes.len();
    }
    let mut constant_rows = Vec::new();
    let mut index = Vec::with_capacity(nodes.len());
    for &n in nodes {
        let next = base + constant_rows.len() / d.max(1);
        let i = *slot.entry(n).or_insert_with(|| {
            constant_rows.extend_from_slice(memory.row(n));
            next
        });
        index.push(i);
    }
    let extra = constant_rows.len() / d.max(1);
    let table = match (flushed, extra) {
        (Some(f), 0) => f.memory,
        (Some(f), _) => {
            let c = tape.constant(Array::new(&[extra, d], constant_rows)?);
            tape.concat_rows(&[f.memory, c])?
        }
        (None, _) => tape.constant(Array::new(&[extra, d], constant_rows)?),
    };
    tape.rows(table, &index)
}

/// `embed(concat(memory, TE(time input)))`.
fn embed(tape: &mut Tape, model: &Model, memory: Var, times: Vec<f64>) -> Result<Var> {
    let tc = model.time.encode(tape, times)?;
    let x = tape.concat_cols(&[memory, tc])?;
    model.embed.forward(tape, x)
}
