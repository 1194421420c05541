//! Alert CSV ingestion.
//!
//! Each row is one alert: detection time (RFC 3339 with offset), flow count,
//! source and target IP, port, protocol, and category label. Source IPs become
//! attacker nodes and target IPs victim nodes.
//!
//! Edge features, in order:
//!
//! | columns | meaning |
//! |---------|---------|
//! | 0..3 | protocol one-hot: TCP, UDP, other |
//! | 3..6 | port bucket one-hot: well-known (<1024), registered (<49152), dynamic |
//! | 6 | `ln(1 + flow_count) / ln(1 + 10^6)` |

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::DateTime;

use super::stream::{EventStream, NodeId, TemporalEvent};
use crate::error::{Error, Result};

pub const FEATURE_WIDTH: usize = 7;
const FLOW_SCALE: f64 = 13.815_511_557_963_774; // ln(1 + 1e6)

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Protocol {
    Tcp,
    Udp,
    Other,
}

impl Protocol {
    pub fn parse(s: &str) -> Protocol {
        match s.trim().to_ascii_uppercase().as_str() {
            "TCP" => Protocol::Tcp,
            "UDP" => Protocol::Udp,
            _ => Protocol::Other,
        }
    }

    fn slot(self) -> usize {
        match self {
            Protocol::Tcp => 0,
            Protocol::Udp => 1,
            Protocol::Other => 2,
        }
    }
}

/// One CSV row as read, before interning.
#[derive(Clone, Debug, PartialEq)]
pub struct AlertRecord {
    /// RFC 3339 text exactly as it appeared in the file.
    pub detect_time: String,
    pub flow_count: u64,
    pub source_ip: String,
    pub target_ip: String,
    pub port: u16,
    /// Protocol text as it appeared; classified with [`Protocol::parse`].
    pub protocol: String,
    pub category: String,
}

/// Column names for each [`AlertRecord`] field.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SchemaConfig {
    pub detect_time: String,
    pub flow_count: String,
    pub source_ip: String,
    pub target_ip: String,
    pub port: String,
    pub protocol: String,
    pub category: String,
}

impl Default for SchemaConfig {
    fn default() -> Self {
        SchemaConfig {
            detect_time: "detect_time".into(),
            flow_count: "flow_count".into(),
            source_ip: "source_ip".into(),
            target_ip: "target_ip".into(),
            port: "port".into(),
            protocol: "protocol".into(),
            category: "category".into(),
        }
    }
}

impl SchemaConfig {
    fn columns(&self) -> [&str; 7] {
        [
            &self.detect_time,
            &self.flow_count,
            &self.source_ip,
            &self.target_ip,
            &self.port,
            &self.protocol,
            &self.category,
        ]
    }
}

pub fn encode_features(protocol: Protocol, port: u16, flow_count: u64) -> Vec<f64> {
    let mut f = vec![0.0; FEATURE_WIDTH];
    f[protocol.slot()] = 1.0;
    let bucket = if port < 1024 {
        0
    } else if port < 49152 {
        1
    } else {
        2
    };
    f[3 + bucket] = 1.0;
    f[6] = (flow_count as f64).ln_1p() / FLOW_SCALE;
    f
}

/// Reads alert rows. Line numbers in errors count the header as line 1.
pub fn read_records<R: Read>(input: R, schema: &SchemaConfig) -> Result<Vec<AlertRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    // A zero-byte file has no header row at all: treat it as no alerts.
    if headers.is_empty() {
        return Ok(Vec::new());
    }
    let mut index = [0usize; 7];
    for (slot, name) in index.iter_mut().zip(schema.columns()) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse {
                line: 1,
                msg: format!("missing required column {name:?}"),
            })?;
    }

    let mut records = Vec::new();
    for (row, result) in reader.records().enumerate() {
        let line = row + 2;
        let rec = result.map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        let field = |k: usize| rec.get(index[k]).unwrap_or("");
        let parse_err = |what: &str, v: &str| Error::Parse {
            line,
            msg: format!("invalid {what} {v:?}"),
        };
        let detect_time = field(0).to_string();
        DateTime::parse_from_rfc3339(&detect_time).map_err(|_| parse_err("detect_time", &detect_time))?;
        let flow_count = field(1)
            .parse::<u64>()
            .map_err(|_| parse_err("flow_count", field(1)))?;
        let port = field(4)
            .parse::<u16>()
            .map_err(|_| parse_err("port", field(4)))?;
        records.push(AlertRecord {
            detect_time,
            flow_count,
            source_ip: field(2).to_string(),
            target_ip: field(3).to_string(),
            port,
            protocol: field(5).to_string(),
            category: field(6).to_string(),
        });
    }
    Ok(records)
}

pub fn write_records<W: Write>(out: W, records: &[AlertRecord], schema: &SchemaConfig) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(schema.columns()).map_err(io)?;
    for r in records {
        w.write_record([
            r.detect_time.as_str(),
            &r.flow_count.to_string(),
            &r.source_ip,
            &r.target_ip,
            &r.port.to_string(),
            &r.protocol,
            &r.category,
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Interns records into a stream.
///
/// Times become seconds after the earliest record; rows are stably sorted so
/// equal timestamps keep file order. An IP seen both as source and target gets
/// one attacker node and one victim node.
pub fn build_stream(records: &[AlertRecord]) -> Result<EventStream> {
    let mut stamped = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let dt = DateTime::parse_from_rfc3339(&r.detect_time).map_err(|_| Error::Parse {
            line: i + 2,
            msg: format!("invalid detect_time {:?}", r.detect_time),
        })?;
        // Whole seconds plus fraction; exact for any realistic alert timestamp.
        let secs = dt.timestamp() as f64 + f64::from(dt.timestamp_subsec_nanos()) * 1e-9;
        stamped.push((secs, i));
    }
    stamped.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let epoch = stamped.first().map_or(0.0, |s| s.0);

    let mut attackers: HashMap<&str, usize> = HashMap::new();
    let mut victims: HashMap<&str, usize> = HashMap::new();
    let mut attacker_labels = Vec::new();
    let mut victim_labels = Vec::new();
    let mut categories: Vec<String> = Vec::new();
    let mut interned = Vec::with_capacity(records.len());
    for &(secs, i) in &stamped {
        let r = &records[i];
        let a = *attackers.entry(&r.source_ip).or_insert_with(|| {
            attacker_labels.push(r.source_ip.clone());
            attacker_labels.len() - 1
        });
        let v = *victims.entry(&r.target_ip).or_insert_with(|| {
            victim_labels.push(r.target_ip.clone());
            victim_labels.len() - 1
        });
        let c = match categories.iter().position(|c| c == &r.category) {
            Some(c) => c,
            None => {
                categories.push(r.category.clone());
                categories.len() - 1
            }
        };
        interned.push((secs - epoch, a, v, c, i));
    }

    let n_attackers = attacker_labels.len();
    let events = interned
        .into_iter()
        .map(|(t, a, v, c, i)| {
            let r = &records[i];
            TemporalEvent {
                src: NodeId(a),
                dst: NodeId(n_attackers + v),
                t,
                features: encode_features(Protocol::parse(&r.protocol), r.port, r.flow_count),
                category: c,
            }
        })
        .collect();
    let mut labels = attacker_labels;
    labels.extend(victim_labels.iter().cloned());
    EventStream::new(events, n_attackers, victim_labels.len(), FEATURE_WIDTH, categories)?
        .with_labels(labels)
}

pub fn parse_csv_reader<R: Read>(input: R, schema: &SchemaConfig) -> Result<EventStream> {
    build_stream(&read_records(input, schema)?)
}

pub fn parse_csv(path: &Path, schema: &SchemaConfig) -> Result<EventStream> {
    let file = std::fs::File::open(path)?;
    parse_csv_reader(std::io::BufReader::new(file), schema)
}
