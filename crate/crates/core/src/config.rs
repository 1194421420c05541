//! Run configuration as plain `key = value` text.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! rejected so typos fail at startup rather than silently using a default.

use std::fmt::Write as _;
use std::path::Path;

use crate::aggregators::{AggregatorKind, AttentionScope};
use crate::error::{Error, Result};
use crate::events::SchemaConfig;

/// How time enters the time encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimeMode {
    /// Elapsed time since the node's last memory update.
    Delta,
    /// Absolute stream time.
    Absolute,
}

/// Order in which training batches are visited each epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchOrder {
    Chronological,
    /// Batch contents stay fixed; only the visiting order is permuted.
    Shuffled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub aggregator: AggregatorKind,
    pub d_node: usize,
    pub d_time: usize,
    pub d_message: usize,
    pub d_memory: usize,
    /// Hidden width per direction of the aggregator BiGRU.
    pub d_gru: usize,
    pub heads: usize,
    pub dropout: f64,
    pub batch_size: usize,
    pub lr: f64,
    /// Largest global gradient norm per step; 0 disables clipping.
    pub grad_clip: f64,
    pub epochs: usize,
    pub patience: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub seed: u64,
    /// Most recent messages kept per node for aggregation.
    pub window: usize,
    /// Candidate negatives per positive for ranking metrics.
    pub candidates: usize,
    pub negatives: usize,
    pub balance: bool,
    pub inductive_fraction: f64,
    pub scope: AttentionScope,
    pub time_mode: TimeMode,
    pub batch_order: BatchOrder,
    /// Bin width in seconds for inter-arrival histograms.
    pub stats_bin: f64,
    pub schema: SchemaConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            aggregator: AggregatorKind::Bita,
            d_node: 100,
            d_time: 100,
            d_message: 100,
            d_memory: 9,
            d_gru: 50,
            heads: 2,
            dropout: 0.1,
            batch_size: 128,
            lr: 1e-4,
            grad_clip: 0.0,
            epochs: 50,
            patience: 5,
            lambda: 1.0,
            gamma: 2.0,
            seed: 0,
            window: 32,
            candidates: 50,
            negatives: 1,
            balance: false,
            inductive_fraction: 0.1,
            scope: AttentionScope::Batch,
            time_mode: TimeMode::Delta,
            batch_order: BatchOrder::Chronological,
            stats_bin: 20.0,
            schema: SchemaConfig::default(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

impl Config {
    pub const KEYS: [&'static str; 32] = [
        "aggregator",
        "d_node",
        "d_time",
        "d_message",
        "d_memory",
        "d_gru",
        "heads",
        "dropout",
        "batch_size",
        "lr",
        "grad_clip",
        "epochs",
        "patience",
        "lambda",
        "gamma",
        "seed",
        "window",
        "candidates",
        "negatives",
        "balance",
        "inductive_fraction",
        "scope",
        "time_mode",
        "batch_order",
        "stats_bin",
        "column.detect_time",
        "column.flow_count",
        "column.source_ip",
        "column.target_ip",
        "column.port",
        "column.protocol",
        "column.category",
    ];

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "aggregator" => self.aggregator = v.parse()?,
            "d_node" => self.d_node = parse_num(key, v)?,
            "d_time" => self.d_time = parse_num(key, v)?,
            "d_message" => self.d_message = parse_num(key, v)?,
            "d_memory" => self.d_memory = parse_num(key, v)?,
            "d_gru" => self.d_gru = parse_num(key, v)?,
            "heads" => self.heads = parse_num(key, v)?,
            "dropout" => self.dropout = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "lr" => self.lr = parse_num(key, v)?,
            "grad_clip" => self.grad_clip = parse_num(key, v)?,
            "epochs" => self.epochs = parse_num(key, v)?,
            "patience" => self.patience = parse_num(key, v)?,
            "lambda" => self.lambda = parse_num(key, v)?,
            "gamma" => self.gamma = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "window" => self.window = parse_num(key, v)?,
            "candidates" => self.candidates = parse_num(key, v)?,
            "negatives" => self.negatives = parse_num(key, v)?,
            "balance" => self.balance = parse_bool(key, v)?,
            "inductive_fraction" => self.inductive_fraction = parse_num(key, v)?,
            "scope" => self.scope = v.parse()?,
            "time_mode" => {
                self.time_mode = match v {
                    "delta" => TimeMode::Delta,
                    "absolute" => TimeMode::Absolute,
                    _ => return Err(Error::Config(format!("time_mode: expected delta or absolute, got {v:?}"))),
                }
            }
            "batch_order" => {
                self.batch_order = match v {
                    "chronological" => BatchOrder::Chronological,
                    "shuffled" => BatchOrder::Shuffled,
                    _ => {
                        return Err(Error::Config(format!(
                            "batch_order: expected chronological or shuffled, got {v:?}"
                        )))
                    }
                }
            }
            "stats_bin" => self.stats_bin = parse_num(key, v)?,
            "column.detect_time" => self.schema.detect_time = v.to_string(),
            "column.flow_count" => self.schema.flow_count = v.to_string(),
            "column.source_ip" => self.schema.source_ip = v.to_string(),
            "column.target_ip" => self.schema.target_ip = v.to_string(),
            "column.port" => self.schema.port = v.to_string(),
            "column.protocol" => self.schema.protocol = v.to_string(),
            "column.category" => self.schema.category = v.to_string(),
            other => return Err(Error::Config(format!("unknown configuration key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected key = value", i + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("config line {}: {}", i + 1, strip_kind(&e))))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Config> {
        let mut c = Config::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Config> {
        Config::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_node", self.d_node),
            ("d_time", self.d_time),
            ("d_message", self.d_message),
            ("d_memory", self.d_memory),
            ("d_gru", self.d_gru),
            ("heads", self.heads),
            ("batch_size", self.batch_size),
            ("window", self.window),
            ("candidates", self.candidates),
            ("negatives", self.negatives),
        ];
        if let Some((k, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{k} must be at least 1")));
        }
        if self.d_message % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_message {} must be divisible by heads {}",
                self.d_message, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must be in [0, 1)".into()));
        }
        if !(self.lr >= 0.0) || !(self.gamma >= 0.0) || !(self.lambda >= 0.0) || !(self.grad_clip >= 0.0) {
            return Err(Error::Config("lr, grad_clip, gamma and lambda must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.inductive_fraction) {
            return Err(Error::Config("inductive_fraction must be in [0, 1]".into()));
        }
        if !(self.stats_bin > 0.0) {
            return Err(Error::Config("stats_bin must be positive".into()));
        }
        Ok(())
    }

    /// Every key with its resolved value, in [`Config::KEYS`] order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let f = crate::report::format_f64;
        let s = &self.schema;
        let values = [
            self.aggregator.to_string(),
            self.d_node.to_string(),
            self.d_time.to_string(),
            self.d_message.to_string(),
            self.d_memory.to_string(),
            self.d_gru.to_string(),
            self.heads.to_string(),
            f(self.dropout),
            self.batch_size.to_string(),
            f(self.lr),
            f(self.grad_clip),
            self.epochs.to_string(),
            self.patience.to_string(),
            f(self.lambda),
            f(self.gamma),
            self.seed.to_string(),
            self.window.to_string(),
            self.candidates.to_string(),
            self.negatives.to_string(),
            self.balance.to_string(),
            f(self.inductive_fraction),
            self.scope.to_string(),
            match self.time_mode {
                TimeMode::Delta => "delta".into(),
                TimeMode::Absolute => "absolute".into(),
            },
            match self.batch_order {
                BatchOrder::Chronological => "chronological".into(),
                BatchOrder::Shuffled => "shuffled".into(),
            },
            f(self.stats_bin),
            s.detect_time.clone(),
            s.flow_count.clone(),
            s.source_ip.clone(),
            s.target_ip.clone(),
            s.port.clone(),
            s.protocol.clone(),
            s.category.clone(),
        ];
        Config::KEYS.into_iter().zip(values).collect()
    }

    /// Text that [`Config::parse`] turns back into `self`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

fn strip_kind(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_parse_round_trip() {
        let mut c = Config::default();
        c.set("aggregator", "mean").unwrap();
        c.set("lr", "0.003").unwrap();
        c.set("column.port", "dst_port").unwrap();
        c.set("batch_order", "shuffled").unwrap();
        assert_eq!(Config::parse(&c.render()).unwrap(), c);
    }

    #[test]
    fn defaults_are_the_published_hyperparameters() {
        let c = Config::default();
        assert_eq!(c.aggregator, AggregatorKind::Bita);
        assert_eq!((c.d_node, c.d_time, c.d_message, c.d_memory), (100, 100, 100, 9));
        assert_eq!(c.heads, 2);
        assert_eq!(c.dropout, 0.1);
        assert_eq!(c.batch_size, 128);
        assert_eq!(c.lr, 1e-4);
        assert_eq!(c.epochs, 50);
        assert_eq!(c.patience, 5);
        assert_eq!(c.lambda, 1.0);
        assert_eq!(c.gamma, 2.0);
        assert_eq!(c.grad_clip, 0.0);
        assert!(!c.balance);
        c.validate().unwrap();
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(Config::parse("learning_rate = 1").is_err());
        assert!(Config::parse("heads = 3").is_err());
        assert!(Config::parse("aggregator = gru").is_err());
        let e = Config::parse("# comment\n\nbatch_size = x").unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
    }
}
