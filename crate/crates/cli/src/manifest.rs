//! Run manifests written next to every command's outputs.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::Serialize;
use sha2::{Digest, Sha256};

use lws_core::data::Corpus;
use lws_core::Result;

pub const MANIFEST_FILE: &str = "manifest.json";

/// SHA-256 over `blob <len>\0` followed by the bytes, the object hash git
/// uses for file contents.
pub fn content_hash<'a>(bytes: impl IntoIterator<Item = &'a u8>, len: usize) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {len}\0").as_bytes());
    let mut buf = Vec::with_capacity(64 * 1024);
    for &b in bytes {
        buf.push(b);
        if buf.len() == buf.capacity() {
            h.update(&buf);
            buf.clear();
        }
    }
    h.update(&buf);
    hex::encode(h.finalize())
}

#[derive(Clone, Debug, Serialize)]
pub struct CorpusRecord {
    pub paths: Vec<PathBuf>,
    pub bytes: usize,
    pub train_tokens: usize,
    pub val_tokens: usize,
    pub content_hash: String,
}

impl CorpusRecord {
    pub fn of(corpus: &Corpus) -> Self {
        let bytes = corpus.train.len() + corpus.val.len();
        CorpusRecord {
            paths: corpus.meta.sources.clone(),
            bytes,
            train_tokens: corpus.train.len(),
            val_tokens: corpus.val.len(),
            content_hash: content_hash(corpus.bytes(), bytes),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub argv: Vec<String>,
    pub configs: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<CorpusRecord>,
    pub outputs: Vec<PathBuf>,
    pub started_at: String,
    pub finished_at: String,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn start(command: &str) -> Self {
        RunManifest {
            tool: env!("CARGO_BIN_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            argv: std::env::args().collect(),
            configs: serde_json::Value::Null,
            seed: None,
            corpus: None,
            outputs: Vec::new(),
            started_at: now(),
            finished_at: String::new(),
        }
    }

    /// Writes `contents` to `path` and records it as an output.
    pub fn write_output(&mut self, path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, contents)?;
        self.outputs.push(path.to_path_buf());
        Ok(())
    }

    pub fn record(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Stamps the finish time and writes `manifest.json` into `dir`.
    pub fn finish(mut self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        self.finished_at = now();
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_vec_pretty(&self)?)?;
        Ok(path)
    }
}
