//! Binary canonical stream file.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic        8 bytes  "TGNSTRM\0"
//! version      u32      = 1
//! n_attackers  u64
//! n_victims    u64
//! width        u64      edge feature width
//! n_categories u64, then per category: u32 byte length + UTF-8 name
//! n_labels     u64, then per label:    u32 byte length + UTF-8 text
//! n_events     u64, then per event:
//!     src u64, dst u64, t f64, category u64, width × f64 features
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::stream::{EventStream, NodeId, TemporalEvent};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"TGNSTRM\0";
const VERSION: u32 = 1;

pub fn write_stream<W: Write>(mut w: W, s: &EventStream) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for v in [s.n_attackers(), s.n_victims(), s.feature_width()] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    write_strings(&mut w, s.category_names())?;
    write_strings(&mut w, s.node_labels())?;
    w.write_all(&(s.len() as u64).to_le_bytes())?;
    for e in s.events() {
        w.write_all(&(e.src.0 as u64).to_le_bytes())?;
        w.write_all(&(e.dst.0 as u64).to_le_bytes())?;
        w.write_all(&e.t.to_le_bytes())?;
        w.write_all(&(e.category as u64).to_le_bytes())?;
        for f in &e.features {
            w.write_all(&f.to_le_bytes())?;
        }
    }
    Ok(())
}

fn write_strings<W: Write>(w: &mut W, items: &[String]) -> Result<()> {
    w.write_all(&(items.len() as u64).to_le_bytes())?;
    for s in items {
        w.write_all(&(s.len() as u32).to_le_bytes())?;
        w.write_all(s.as_bytes())?;
    }
    Ok(())
}

struct Cursor<R: Read>(R);

impl<R: Read> Cursor<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0
            .read_exact(&mut b)
            .map_err(|_| Error::Checkpoint("stream file is truncated".into()))?;
        Ok(b)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("count overflows usize".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
    fn strings(&mut self) -> Result<Vec<String>> {
        let n = self.usize()?;
        let mut out = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let len = self.u32()? as usize;
            let mut buf = vec![0u8; len];
            self.0
                .read_exact(&mut buf)
                .map_err(|_| Error::Checkpoint("stream file is truncated".into()))?;
            out.push(String::from_utf8(buf).map_err(|_| Error::Checkpoint("label is not UTF-8".into()))?);
        }
        Ok(out)
    }
}

pub fn read_stream<R: Read>(r: R) -> Result<EventStream> {
    let mut c = Cursor(r);
    if &c.bytes::<8>()? != MAGIC {
        return Err(Error::Checkpoint("not a canonical stream file".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "stream file version {version}, expected {VERSION}"
        )));
    }
    let n_attackers = c.usize()?;
    let n_victims = c.usize()?;
    let width = c.usize()?;
    let categories = c.strings()?;
    let labels = c.strings()?;
    let n = c.usize()?;
    let mut events = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let src = NodeId(c.usize()?);
        let dst = NodeId(c.usize()?);
        let t = c.f64()?;
        let category = c.usize()?;
        let features = (0..width).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
        events.push(TemporalEvent { src, dst, t, features, category });
    }
    EventStream::new(events, n_attackers, n_victims, width, categories)?.with_labels(labels)
}

pub fn save_stream(path: &Path, s: &EventStream) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_stream(&mut f, s)?;
    f.flush()?;
    Ok(())
}

pub fn load_stream(path: &Path) -> Result<EventStream> {
    read_stream(std::io::BufReader::new(std::fs::File::open(path)?))
}
