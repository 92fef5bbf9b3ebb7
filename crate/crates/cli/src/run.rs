//! Run directories and manifests.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use tailrisk_core::config::{FileDigest, Manifest, RunConfig};

/// Outputs of one command, held in memory until the run succeeds.
#[derive(Default)]
pub struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    pub fn add_with<F>(&mut self, name: impl Into<String>, write: F) -> Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> tailrisk_core::Result<()>,
    {
        let mut buf = Vec::new();
        write(&mut buf)?;
        self.add(name, buf);
        Ok(())
    }

    pub fn add_json<T: serde::Serialize>(&mut self, name: impl Into<String>, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.add(name, s.into_bytes());
        Ok(())
    }
}

pub struct RunContext<'a> {
    pub config: &'a RunConfig,
    pub command: Vec<String>,
    pub out_root: PathBuf,
    pub timestamped: bool,
}

fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

impl RunContext<'_> {
    fn run_dir(&self, config_hash: &str) -> PathBuf {
        let key = sha256_hex(format!("{config_hash}\n{}", self.command.join("\u{1f}")).as_bytes());
        let short = &key[..12];
        if !self.timestamped {
            return self.out_root.join(short);
        }
        let stamp = chrono::Local::now().format("%Y%m%dT%H%M%S");
        let base = self.out_root.join(format!("{stamp}-{short}"));
        let mut dir = base.clone();
        let mut k = 1;
        while dir.exists() {
            dir = PathBuf::from(format!("{}-{k}", base.display()));
            k += 1;
        }
        dir
    }

    /// Writes every output and the manifest; returns the run directory.
    pub fn finish(&self, outputs: Outputs) -> Result<PathBuf> {
        let config_hash = self.config.hash();
        let dir = self.run_dir(&config_hash);
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut digests = Vec::new();
        for (name, bytes) in &outputs.files {
            let path = dir.join(name);
            fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
            digests.push(FileDigest {
                path: name.clone(),
                sha256: sha256_hex(bytes),
            });
        }
        let mut inputs = Vec::new();
        if let Some(data) = &self.config.data {
            inputs.push(FileDigest::of(&data.path, data.path.display().to_string())?);
        }
        let manifest = Manifest {
            tool: "tailrisk".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: self.command.clone(),
            seed: self.config.seed,
            config_hash,
            config: self.config.clone(),
            inputs,
            outputs: digests,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(dir.join("manifest.json"), text).context("writing manifest")?;
        Ok(dir)
    }
}

/// When the configuration came from a manifest, its recorded inputs must
/// still match.
pub fn verify_manifest_inputs(path: &Path) -> Result<()> {
    let text = fs::read_to_string(path)?;
    if !text.trim_start().starts_with('{') {
        return Ok(());
    }
    let m: Manifest = serde_json::from_str(&text)?;
    for input in &m.inputs {
        let p = Path::new(&input.path);
        let now = FileDigest::of(p, input.path.clone())?;
        if now.sha256 != input.sha256 {
            anyhow::bail!("input {} changed since the manifest was written", input.path);
        }
    }
    Ok(())
}
