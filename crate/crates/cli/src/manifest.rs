//! Run manifests.
//!
//! A manifest is a configuration file with a commented preamble: the
//! command, code version, seed, input digests, start time and output paths
//! appear as `# key = value` lines, followed by the resolved configuration.
//! Since the configuration parser skips comments, `--config manifest.txt`
//! reruns with exactly the same settings.

use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use tgn_core::config::Config;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

pub struct Manifest {
    pub command: String,
    pub inputs: Vec<(String, PathBuf)>,
    pub outputs: Vec<(String, PathBuf)>,
    pub config: Config,
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let mut f = fs::File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

impl Manifest {
    pub fn render(&self) -> std::io::Result<String> {
        let mut s = String::new();
        let _ = writeln!(s, "# tgn run manifest");
        let _ = writeln!(s, "# schema_version = {MANIFEST_SCHEMA_VERSION}");
        let _ = writeln!(s, "# command = {}", self.command);
        let _ = writeln!(s, "# code_version = {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(s, "# seed = {}", self.config.seed);
        let _ = writeln!(s, "# started = {}", chrono::Utc::now().to_rfc3339());
        for (name, path) in &self.inputs {
            let _ = writeln!(s, "# input.{name} = {} sha256={}", path.display(), sha256_file(path)?);
        }
        for (name, path) in &self.outputs {
            let _ = writeln!(s, "# output.{name} = {}", path.display());
        }
        s.push_str(&self.config.render());
        Ok(s)
    }

    /// Must be called before any computation starts.
    pub fn write(&self, dir: &Path) -> std::io::Result<PathBuf> {
        let path = dir.join("manifest.txt");
        fs::write(&path, self.render()?)?;
        Ok(path)
    }
}
