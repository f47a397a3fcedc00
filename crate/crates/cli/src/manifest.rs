//! Run manifests and atomic artifact writes.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub seed: u64,
    /// The resolved config, verbatim.
    pub config: String,
    pub wall_clock_seconds: f64,
    /// SHA-256 of every output file, by file name.
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_NAME);
        let text =
            fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Collects artifacts of one run and writes each atomically.
pub struct OutputDir {
    dir: PathBuf,
    outputs: BTreeMap<String, String>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            outputs: BTreeMap::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    /// Writes `bytes` to a temporary file in the directory, then renames it
    /// over `name`; a failure never leaves a partial file behind.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        atomic_write(&self.dir.join(name), bytes)?;
        self.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    pub fn finish(
        self,
        subcommand: &str,
        seed: u64,
        config: String,
        wall_clock_seconds: f64,
    ) -> Result<RunManifest> {
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            subcommand: subcommand.to_string(),
            seed,
            config,
            wall_clock_seconds,
            outputs: self.outputs,
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        atomic_write(&self.dir.join(MANIFEST_NAME), &bytes)?;
        Ok(manifest)
    }
}

pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("temp file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("renaming onto {}", path.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_lists_checksums() {
        let tmp = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(tmp.path()).unwrap();
        out.write("a.csv", b"x\n1\n").unwrap();
        let m = out
            .finish("facelift", 3, "run.seed = 3\n".into(), 0.5)
            .unwrap();
        assert_eq!(m.outputs["a.csv"], sha256_hex(b"x\n1\n"));
        assert_eq!(RunManifest::read(tmp.path()).unwrap(), m);
        let leftovers: Vec<_> = fs::read_dir(tmp.path()).unwrap().collect();
        assert_eq!(leftovers.len(), 2);
    }
}
