//! Output directory bookkeeping and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use anyhow::Context;
use chrono::{SecondsFormat, Utc};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::settings::{hex, Settings};

pub const MANIFEST_FILE: &str = "manifest.json";

static RUN_START: OnceLock<(Instant, String)> = OnceLock::new();

/// Start of the current run, fixed by the first call.
pub fn run_start() -> &'static (Instant, String) {
    RUN_START.get_or_init(|| (Instant::now(), Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)))
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: &'static str,
    pub inputs: Vec<String>,
    pub config_hash: String,
    pub seed: u64,
    pub settings: Settings,
    pub started_at: String,
    pub wall_clock_ms: u128,
    pub outputs: Vec<OutputRecord>,
}

/// Writes files under one root and remembers each for the manifest.
pub struct Output {
    root: PathBuf,
    command: String,
    config_hash: String,
    started: Instant,
    started_at: String,
    records: Vec<OutputRecord>,
}

impl Output {
    pub fn create(root: &Path, command: &str, settings: &Settings) -> anyhow::Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            command: command.to_string(),
            config_hash: settings.hash(command),
            started: run_start().0,
            started_at: run_start().1.clone(),
            records: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    /// Paths written so far, relative to the root, sorted.
    pub fn paths(&self) -> Vec<String> {
        let mut p: Vec<String> = self.records.iter().map(|r| r.path.clone()).collect();
        p.sort();
        p
    }

    pub fn bytes(&mut self, rel: &str, data: &[u8]) -> anyhow::Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        fs::write(&path, data).with_context(|| format!("writing {}", path.display()))?;
        self.record(rel, data);
        Ok(())
    }

    /// Registers a file that something else already wrote under the root.
    pub fn adopt(&mut self, rel: &str) -> anyhow::Result<()> {
        let path = self.root.join(rel);
        let data = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        self.record(rel, &data);
        Ok(())
    }

    fn record(&mut self, rel: &str, data: &[u8]) {
        self.records.retain(|r| r.path != rel);
        self.records.push(OutputRecord {
            path: rel.to_string(),
            sha256: hex(&Sha256::digest(data)),
        });
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, rel: &str, value: &T) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(value).context("serializing JSON")?;
        text.push('\n');
        self.bytes(rel, text.as_bytes())
    }

    pub fn csv<R, I, S>(&mut self, rel: &str, header: &[&str], rows: R) -> anyhow::Result<()>
    where
        R: IntoIterator<Item = I>,
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        let data = w.into_inner().context("finishing CSV")?;
        self.bytes(rel, &data)
    }

    /// Writes `manifest.json` listing every output with its digest.
    pub fn finish(mut self, inputs: Vec<String>, settings: &Settings) -> anyhow::Result<()> {
        self.records.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = RunManifest {
            command: self.command.clone(),
            tool_version: env!("CARGO_PKG_VERSION"),
            inputs,
            config_hash: self.config_hash.clone(),
            seed: settings.seed,
            settings: settings.clone(),
            started_at: self.started_at.clone(),
            wall_clock_ms: self.started.elapsed().as_millis(),
            outputs: self.records.clone(),
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let path = self.root.join(MANIFEST_FILE);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}

/// A link id made safe for use as a file name.
pub fn file_stem(link_id: &str) -> String {
    link_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

/// Shortest round-tripping decimal form, as used in every CSV.
pub fn num(v: f64) -> String {
    v.to_string()
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stems() {
        assert_eq!(file_stem("M25/J10-J11"), "M25_J10-J11");
        assert_eq!(file_stem("a.b_c"), "a.b_c");
    }
}
