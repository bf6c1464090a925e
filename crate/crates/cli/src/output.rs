//! Artifact writing: CSV tables, JSON reports, and the run manifest.
//! Everything written here is a pure function of config + seed — no
//! timestamps, no hostnames — so reruns are byte-identical.

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Collects artifact paths and warnings while a subcommand runs, then
/// seals them into manifest.json.
pub struct RunDir {
    dir: PathBuf,
    files: Vec<String>,
    warnings: Vec<String>,
}

impl RunDir {
    pub fn create(dir: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(RunDir {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            warnings: Vec::new(),
        })
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        self.warnings.push(msg.into());
    }

    /// Write a CSV file: header row plus formatted records.
    pub fn write_csv(
        &mut self,
        name: &str,
        header: &str,
        rows: impl IntoIterator<Item = String>,
    ) -> anyhow::Result<PathBuf> {
        let mut text = String::from(header);
        text.push('\n');
        for row in rows {
            text.push_str(&row);
            text.push('\n');
        }
        self.write_bytes(name, text.as_bytes())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    /// Write JSON-lines: one compact record per line.
    pub fn write_jsonl<T: Serialize>(
        &mut self,
        name: &str,
        records: impl IntoIterator<Item = T>,
    ) -> anyhow::Result<PathBuf> {
        let mut text = String::new();
        for r in records {
            text.push_str(&serde_json::to_string(&r)?);
            text.push('\n');
        }
        self.write_bytes(name, text.as_bytes())
    }

    fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> anyhow::Result<PathBuf> {
        let path = self.dir.join(name);
        let mut f = fs::File::create(&path)?;
        f.write_all(bytes)?;
        self.files.push(name.to_string());
        Ok(path)
    }

    /// Seal the run: record what was produced and under which inputs.
    pub fn finish_manifest(
        mut self,
        subcommand: &str,
        config_bytes: &[u8],
        seed: u64,
    ) -> anyhow::Result<()> {
        let digest = Sha256::digest(config_bytes);
        let manifest = Manifest {
            subcommand: subcommand.to_string(),
            config_sha256: hex_string(&digest),
            seed,
            cli_version: env!("CARGO_PKG_VERSION").to_string(),
            core_version: deltapin::VERSION.to_string(),
            outputs: std::mem::take(&mut self.files),
            warnings: std::mem::take(&mut self.warnings),
        };
        self.write_json("manifest.json", &manifest)?;
        Ok(())
    }
}

#[derive(Serialize)]
struct Manifest {
    subcommand: String,
    config_sha256: String,
    seed: u64,
    cli_version: String,
    core_version: String,
    outputs: Vec<String>,
    warnings: Vec<String>,
}

fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}
