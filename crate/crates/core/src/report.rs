//! Line-oriented `field=value` report records.
//!
//! Every report starts with a header record naming the schema and its
//! version, e.g. `record=header schema=stream_stats schema_version=1`.
//! Values containing spaces, `=` or quotes are written double-quoted with
//! `\"` and `\\` escapes.

use std::fmt;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Record {
    fields: Vec<(String, String)>,
}

impl Record {
    pub fn new(kind: &str) -> Self {
        Record {
            fields: vec![("record".into(), kind.into())],
        }
    }

    pub fn header(schema: &str, version: u32) -> Self {
        Record::new("header")
            .with("schema", schema)
            .with("schema_version", version)
    }

    pub fn with(mut self, key: &str, value: impl fmt::Display) -> Self {
        self.fields.push((key.into(), value.to_string()));
        self
    }

    /// Floats in shortest round-trip form.
    pub fn with_f64(self, key: &str, value: f64) -> Self {
        self.with(key, format_f64(value))
    }

    pub fn kind(&self) -> &str {
        &self.fields[0].1
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key).and_then(|v| v.parse().ok())
    }

    pub fn fields(&self) -> &[(String, String)] {
        &self.fields
    }

    /// Parses one rendered line.
    pub fn parse(line: &str) -> Option<Record> {
        let mut fields = Vec::new();
        let mut chars = line.trim().chars().peekable();
        loop {
            while chars.peek() == Some(&' ') {
                chars.next();
            }
            if chars.peek().is_none() {
                break;
            }
            let mut key = String::new();
            for c in chars.by_ref() {
                if c == '=' {
                    break;
                }
                key.push(c);
            }
            let mut value = String::new();
            if chars.peek() == Some(&'"') {
                chars.next();
                while let Some(c) = chars.next() {
                    match c {
                        '\\' => value.push(chars.next()?),
                        '"' => break,
                        c => value.push(c),
                    }
                }
            } else {
                while let Some(&c) = chars.peek() {
                    if c == ' ' {
                        break;
                    }
                    value.push(c);
                    chars.next();
                }
            }
            fields.push((key, value));
        }
        if fields.first().map(|(k, _)| k.as_str()) != Some("record") {
            return None;
        }
        Some(Record { fields })
    }
}

pub fn format_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v:?}")
    }
}

impl fmt::Display for Record {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (k, v)) in self.fields.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            if v.is_empty() || v.contains([' ', '=', '"', '\\']) {
                let escaped = v.replace('\\', "\\\\").replace('"', "\\\"");
                write!(f, "{k}=\"{escaped}\"")?;
            } else {
                write!(f, "{k}={v}")?;
            }
        }
        Ok(())
    }
}

pub fn render(records: &[Record]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_string());
        out.push('\n');
    }
    out
}

pub fn parse_all(text: &str) -> Vec<Record> {
    text.lines().filter_map(Record::parse).collect()
}
