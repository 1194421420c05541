//! Engine checkpoints as a `checkpoint` [`Container`].
//!
//! Header fields: `aggregator`, `n_nodes`, `n_attackers`, `n_victims`,
//! `feature_width`, `n_categories`, `d_node`, `d_time`, `d_message`,
//! `d_memory`, `d_gru`, `heads`, `window`, `category.<i>`, and `config` (the
//! full rendered configuration). Sections:
//!
//! - `param/<name>` and `adam.m/<name>`, `adam.v/<name>` for every parameter, plus `adam.step`;
//! - `focal.alpha`;
//! - `memory.state`, `memory.last_update`;
//! - `store.node`, `store.other`, `store.t`, `store.dt`, `store.features`;
//! - `history.node`, `history.other`, `history.t`, `history.dt`, `history.features`;
//! - `clock`, `batches`, `rng.negatives`, `rng.dropout`.

use std::path::Path;

use super::{Engine, EngineState, History, NodeMemory, RawMessage, RawMessageStore};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::events::{EventStream, NodeId};
use crate::numcore::{Array, Rng, RngState};
use crate::persist::Container;

const KIND: &str = "checkpoint";

fn rng_words(r: &Rng) -> Vec<u64> {
    let s = r.state();
    vec![s.seed, s.stream, s.word_pos as u64, (s.word_pos >> 64) as u64]
}

fn rng_from(words: &[u64]) -> Result<Rng> {
    match words {
        [seed, stream, lo, hi] => Ok(Rng::from_state(RngState {
            seed: *seed,
            stream: *stream,
            word_pos: (*lo as u128) | ((*hi as u128) << 64),
        })),
        _ => Err(Error::Checkpoint("generator state needs 4 words".into())),
    }
}

fn push_messages(c: &mut Container, prefix: &str, items: &[(NodeId, &RawMessage)], width: usize) {
    c.push_u64(&format!("{prefix}.node"), items.iter().map(|(n, _)| n.0 as u64).collect());
    c.push_u64(&format!("{prefix}.other"), items.iter().map(|(_, m)| m.other.0 as u64).collect());
    c.push_f64(&format!("{prefix}.t"), items.iter().map(|(_, m)| m.t).collect());
    c.push_f64(&format!("{prefix}.dt"), items.iter().map(|(_, m)| m.dt).collect());
    let feats: Vec<f64> = items.iter().flat_map(|(_, m)| m.features.iter().copied()).collect();
    c.push_array(
        &format!("{prefix}.features"),
        &Array::new(&[items.len(), width], feats).expect("feature rows have the stream width"),
    );
}

fn read_messages(c: &Container, prefix: &str, n_nodes: usize) -> Result<Vec<(NodeId, RawMessage)>> {
    let nodes = c.u64s(&format!("{prefix}.node"))?;
    let others = c.u64s(&format!("{prefix}.other"))?;
    let ts = c.f64s(&format!("{prefix}.t"))?;
    let dts = c.f64s(&format!("{prefix}.dt"))?;
    let feats = c.array(&format!("{prefix}.features"))?;
    let len = nodes.len();
    if others.len() != len || ts.len() != len || dts.len() != len || feats.rows() != len {
        return Err(Error::Checkpoint(format!("{prefix} sections disagree in length")));
    }
    let mut out = Vec::with_capacity(len);
    for i in 0..len {
        let (n, o) = (nodes[i] as usize, others[i] as usize);
        if n >= n_nodes || o >= n_nodes {
            return Err(Error::Checkpoint(format!("{prefix} refers to a node outside the graph")));
        }
        out.push((
            NodeId(n),
            RawMessage {
                other: NodeId(o),
                t: ts[i],
                dt: dts[i],
                features: feats.row_slice(i).to_vec(),
            },
        ));
    }
    Ok(out)
}

impl Engine {
    pub fn to_container(&self) -> Container {
        let cfg = &self.cfg;
        let s = &self.space;
        let mut c = Container::new(KIND);
        c.set_meta("aggregator", cfg.aggregator);
        c.set_meta("n_nodes", s.node_count());
        c.set_meta("n_attackers", s.n_attackers());
        c.set_meta("n_victims", s.n_victims());
        c.set_meta("feature_width", s.feature_width());
        c.set_meta("n_categories", s.n_categories());
        for (k, v) in [
            ("d_node", cfg.d_node),
            ("d_time", cfg.d_time),
            ("d_message", cfg.d_message),
            ("d_memory", cfg.d_memory),
            ("d_gru", cfg.d_gru),
            ("heads", cfg.heads),
            ("window", cfg.window),
        ] {
            c.set_meta(k, v);
        }
        for (i, name) in s.category_names().iter().enumerate() {
            c.set_meta(&format!("category.{i}"), name);
        }
        c.set_meta("config", cfg.render());

        let params = &self.model.params;
        for (_, name, a) in params.iter() {
            c.push_array(&format!("param/{name}"), a);
        }
        let (m, v) = self.optimizer.moments();
        for (id, name, _) in params.iter() {
            c.push_array(&format!("adam.m/{name}"), &m[id]);
            c.push_array(&format!("adam.v/{name}"), &v[id]);
        }
        c.push_u64("adam.step", vec![self.optimizer.step_count()]);
        c.push_f64("focal.alpha", self.focal.alpha.clone());

        let st = &self.state;
        c.push_array("memory.state", st.memory.state());
        c.push_f64("memory.last_update", st.memory.last_updates().to_vec());
        let width = s.feature_width();
        let store: Vec<(NodeId, &RawMessage)> = st
            .store
            .pending()
            .into_iter()
            .map(|n| (n, st.store.get(n).expect("pending")))
            .collect();
        push_messages(&mut c, "store", &store, width);
        let history: Vec<(NodeId, &RawMessage)> = (0..s.node_count())
            .flat_map(|n| st.history.of(NodeId(n)).iter().map(move |m| (NodeId(n), m)))
            .collect();
        push_messages(&mut c, "history", &history, width);
        c.push_f64("clock", vec![st.clock]);
        c.push_u64("batches", vec![st.batches]);
        c.push_u64("rng.negatives", rng_words(&st.negatives_rng));
        c.push_u64("rng.dropout", rng_words(&st.dropout_rng));
        c
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    /// Rebuilds an engine, configuration included, from a checkpoint.
    pub fn from_container(c: &Container) -> Result<Engine> {
        if c.kind != KIND {
            return Err(Error::Checkpoint(format!("expected a checkpoint, found {:?}", c.kind)));
        }
        let cfg = Config::parse(c.require_meta("config")?)?;
        let num = |k: &str| -> Result<usize> {
            c.require_meta(k)?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("header field {k} is not a number")))
        };
        let k = num("n_categories")?;
        let names = (0..k)
            .map(|i| c.require_meta(&format!("category.{i}")).map(str::to_string))
            .collect::<Result<Vec<_>>>()?;
        let space = EventStream::new(Vec::new(), num("n_attackers")?, num("n_victims")?, num("feature_width")?, names)?;
        let mut engine = Engine::new(&cfg, &space)?;
        engine.restore_container(c)?;
        Ok(engine)
    }

    pub fn load(path: &Path) -> Result<Engine> {
        Engine::from_container(&Container::load(path)?)
    }

    /// Overwrites parameters, optimizer and stream state from `c`, which must
    /// come from an engine with the same shape.
    pub fn restore_container(&mut self, c: &Container) -> Result<()> {
        if c.kind != KIND {
            return Err(Error::Checkpoint(format!("expected a checkpoint, found {:?}", c.kind)));
        }
        let s = &self.space;
        let ours = [
            ("aggregator", self.cfg.aggregator.to_string()),
            ("n_nodes", s.node_count().to_string()),
            ("n_attackers", s.n_attackers().to_string()),
            ("n_victims", s.n_victims().to_string()),
            ("feature_width", s.feature_width().to_string()),
            ("n_categories", s.n_categories().to_string()),
            ("d_node", self.cfg.d_node.to_string()),
            ("d_time", self.cfg.d_time.to_string()),
            ("d_message", self.cfg.d_message.to_string()),
            ("d_memory", self.cfg.d_memory.to_string()),
            ("d_gru", self.cfg.d_gru.to_string()),
            ("heads", self.cfg.heads.to_string()),
            ("window", self.cfg.window.to_string()),
        ];
        for (k, want) in &ours {
            let got = c.require_meta(k)?;
            if got != want {
                return Err(Error::Dimension(format!(
                    "checkpoint has {k} = {got}, this engine has {want}"
                )));
            }
        }

        let mut params = self.model.params.clone();
        crate::persist::load_params_into(&mut params, c, "param/")?;
        let mut m = Vec::with_capacity(params.len());
        let mut v = Vec::with_capacity(params.len());
        for (_, name, a) in params.iter() {
            for (dst, prefix) in [(&mut m, "adam.m/"), (&mut v, "adam.v/")] {
                let x = c.array(&format!("{prefix}{name}"))?;
                if x.shape() != a.shape() {
                    return Err(Error::Dimension(format!("optimizer state for {name} has the wrong shape")));
                }
                dst.push(x);
            }
        }
        let step = *c
            .u64s("adam.step")?
            .first()
            .ok_or_else(|| Error::Checkpoint("empty adam.step".into()))?;
        let alpha = c.f64s("focal.alpha")?;

        let n = s.node_count();
        let mem = c.array("memory.state")?;
        let last = c.f64s("memory.last_update")?;
        if mem.shape() != [n, self.cfg.d_memory] || last.len() != n {
            return Err(Error::Dimension(format!(
                "memory has shape {:?}, expected [{n}, {}]",
                mem.shape(),
                self.cfg.d_memory
            )));
        }
        let mut store = RawMessageStore::new(n);
        for (node, msg) in read_messages(c, "store", n)? {
            store.put(node, msg);
        }
        let mut history = History::new(n, self.cfg.window);
        for (node, msg) in read_messages(c, "history", n)? {
            history.push(node, msg);
        }
        let scalar = |name: &str| -> Result<f64> {
            c.f64s(name)?
                .first()
                .copied()
                .ok_or_else(|| Error::Checkpoint(format!("empty {name}")))
        };
        let state = EngineState {
            memory: NodeMemory::from_parts(mem, last),
            store,
            history,
            clock: scalar("clock")?,
            batches: *c
                .u64s("batches")?
                .first()
                .ok_or_else(|| Error::Checkpoint("empty batches".into()))?,
            negatives_rng: rng_from(c.u64s("rng.negatives")?)?,
            dropout_rng: rng_from(c.u64s("rng.dropout")?)?,
        };

        self.set_class_weights(alpha)?;
        self.model.params = params;
        self.optimizer.restore(step, m, v);
        self.state = state;
        Ok(())
    }

    pub fn restore(&mut self, path: &Path) -> Result<()> {
        self.restore_container(&Container::load(path)?)
    }
}
