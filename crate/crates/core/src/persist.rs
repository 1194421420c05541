//! Versioned binary container of named arrays.
//!
//! Used for parameter files and engine checkpoints. Layout, little-endian:
//!
//! ```text
//! magic      8 bytes  "TGNCKPT\0"
//! version    u32      = 1
//! kind       str      e.g. "params" or "checkpoint"
//! n_meta     u32, then per entry: key str, value str
//! n_sections u32, then per section:
//!     name str
//!     dtype u8        0 = f64, 1 = u64
//!     ndim  u32, then ndim × u64 extents
//!     data            product(extents) values of dtype
//! ```
//!
//! `str` is a u32 byte length followed by UTF-8 bytes. Entries and sections
//! keep insertion order, so writing a container read from disk reproduces the
//! original bytes.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::{Array, ParamStore};

const MAGIC: &[u8; 8] = b"TGNCKPT\0";
pub const CONTAINER_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum SectionData {
    F64(Vec<f64>),
    U64(Vec<u64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Section {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: SectionData,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: Vec<(String, String)>,
    pub sections: Vec<Section>,
}

impl Container {
    pub fn new(kind: &str) -> Self {
        Container {
            kind: kind.to_string(),
            meta: Vec::new(),
            sections: Vec::new(),
        }
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        self.meta.push((key.to_string(), value.to_string()));
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require_meta(&self, key: &str) -> Result<&str> {
        self.meta(key)
            .ok_or_else(|| Error::Checkpoint(format!("missing header field {key:?}")))
    }

    pub fn push_array(&mut self, name: &str, a: &Array) {
        self.sections.push(Section {
            name: name.to_string(),
            shape: a.shape().to_vec(),
            data: SectionData::F64(a.data().to_vec()),
        });
    }

    pub fn push_f64(&mut self, name: &str, v: Vec<f64>) {
        self.sections.push(Section {
            name: name.to_string(),
            shape: vec![v.len()],
            data: SectionData::F64(v),
        });
    }

    pub fn push_u64(&mut self, name: &str, v: Vec<u64>) {
        self.sections.push(Section {
            name: name.to_string(),
            shape: vec![v.len()],
            data: SectionData::U64(v),
        });
    }

    fn section(&self, name: &str) -> Result<&Section> {
        self.sections
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing section {name:?}")))
    }

    pub fn array(&self, name: &str) -> Result<Array> {
        let s = self.section(name)?;
        match &s.data {
            SectionData::F64(v) => Array::new(&s.shape, v.clone()),
            SectionData::U64(_) => Err(Error::Checkpoint(format!("section {name:?} is not f64"))),
        }
    }

    pub fn f64s(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.array(name)?.into_data())
    }

    pub fn u64s(&self, name: &str) -> Result<&[u64]> {
        match &self.section(name)?.data {
            SectionData::U64(v) => Ok(v),
            SectionData::F64(_) => Err(Error::Checkpoint(format!("section {name:?} is not u64"))),
        }
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&CONTAINER_VERSION.to_le_bytes())?;
        write_str(&mut w, &self.kind)?;
        w.write_all(&(self.meta.len() as u32).to_le_bytes())?;
        for (k, v) in &self.meta {
            write_str(&mut w, k)?;
            write_str(&mut w, v)?;
        }
        w.write_all(&(self.sections.len() as u32).to_le_bytes())?;
        for s in &self.sections {
            write_str(&mut w, &s.name)?;
            let tag: u8 = match s.data {
                SectionData::F64(_) => 0,
                SectionData::U64(_) => 1,
            };
            w.write_all(&[tag])?;
            w.write_all(&(s.shape.len() as u32).to_le_bytes())?;
            for &d in &s.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            match &s.data {
                SectionData::F64(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
                SectionData::U64(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Container> {
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CONTAINER_VERSION {
            return Err(Error::Checkpoint(format!(
                "file version {version} is not supported (expected {CONTAINER_VERSION})"
            )));
        }
        let kind = read_str(&mut r)?;
        let n_meta = read_u32(&mut r)?;
        let mut meta = Vec::new();
        for _ in 0..n_meta {
            meta.push((read_str(&mut r)?, read_str(&mut r)?));
        }
        let n_sections = read_u32(&mut r)?;
        let mut sections = Vec::new();
        for _ in 0..n_sections {
            let name = read_str(&mut r)?;
            let mut tag = [0u8; 1];
            read_exact(&mut r, &mut tag)?;
            let ndim = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(ndim.min(8));
            for _ in 0..ndim {
                shape.push(
                    usize::try_from(read_u64(&mut r)?)
                        .map_err(|_| Error::Checkpoint("extent overflows usize".into()))?,
                );
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Checkpoint(format!("section {name:?} is too large")))?;
            let data = match tag[0] {
                0 => SectionData::F64((0..n).map(|_| read_u64(&mut r).map(f64::from_bits)).collect::<Result<_>>()?),
                1 => SectionData::U64((0..n).map(|_| read_u64(&mut r)).collect::<Result<_>>()?),
                t => return Err(Error::Checkpoint(format!("section {name:?} has unknown dtype {t}"))),
            };
            sections.push(Section { name, shape, data });
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Checkpoint("trailing bytes after last section".into()));
        }
        Ok(Container { kind, meta, sections })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Container> {
        let bytes = std::fs::read(path)?;
        Container::read(bytes.as_slice())
    }
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Checkpoint("file is truncated".into()))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    read_exact(r, &mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Checkpoint("string is not UTF-8".into()))
}

/// Parameters as a `params` container, one section per array in store order.
pub fn params_to_container(params: &ParamStore) -> Container {
    let mut c = Container::new("params");
    for (_, name, a) in params.iter() {
        c.push_array(name, a);
    }
    c
}

/// Overwrites every parameter of `params` from `c`; names and shapes must match.
pub fn load_params_into(params: &mut ParamStore, c: &Container, prefix: &str) -> Result<()> {
    for id in params.ids() {
        let name = format!("{prefix}{}", params.name(id));
        let a = c.array(&name)?;
        if a.shape() != params.get(id).shape() {
            return Err(Error::Dimension(format!(
                "parameter {name} has shape {:?} in the file but {:?} in this model",
                a.shape(),
                params.get(id).shape()
            )));
        }
        params.set(id, a);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut c = Container::new("params");
        c.set_meta("aggregator", "bita");
        c.push_array("w", &Array::new(&[2, 2], vec![1.0, -0.0, f64::MIN_POSITIVE, 3.5]).unwrap());
        c.push_u64("ids", vec![7, u64::MAX]);
        c
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let bytes = sample().to_bytes();
        let back = Container::read(bytes.as_slice()).unwrap();
        assert_eq!(back, sample());
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn truncation_and_version_are_reported() {
        let bytes = sample().to_bytes();
        let e = Container::read(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(e.to_string().contains("truncated"), "{e}");
        let mut bad = bytes.clone();
        bad[8] = 9;
        let e = Container::read(bad.as_slice()).unwrap_err();
        assert!(e.to_string().contains("version 9"), "{e}");
    }
}
