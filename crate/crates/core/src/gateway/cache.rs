//! Content-addressed generation cache.
//!
//! Each record lives in `<dir>/<sha256 hex>.txt`: `key: value` header lines,
//! one blank line, then the raw output. Files are written to a temporary file
//! in the same directory and renamed into place.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use log::warn;
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

use super::{GatewayError, GenerationRecord};

pub fn cache_key(
    backend: &str,
    model_id: &str,
    temperature: f64,
    max_tokens: u32,
    prompt: &str,
) -> String {
    let mut h = Sha256::new();
    for part in [
        backend,
        model_id,
        &format!("{temperature:?}"),
        &max_tokens.to_string(),
        prompt,
    ] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Default)]
pub struct ResponseCache {
    dir: Option<PathBuf>,
    memory: Mutex<HashMap<String, GenerationRecord>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)
            .map_err(|e| GatewayError::Cache(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir: Some(dir),
            memory: Mutex::default(),
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{key}.txt")))
    }

    pub fn get(&self, key: &str, prompt: &str) -> Option<GenerationRecord> {
        if let Some(r) = self.memory.lock().unwrap().get(key) {
            return (r.prompt == prompt).then(|| r.clone());
        }
        let path = self.path(key)?;
        let text = fs::read_to_string(&path).ok()?;
        match parse_file(&text, prompt) {
            Some(record) => {
                self.memory
                    .lock()
                    .unwrap()
                    .insert(key.to_string(), record.clone());
                Some(record)
            }
            None => {
                warn!("ignoring unreadable cache file {}", path.display());
                None
            }
        }
    }

    pub fn put(&self, key: &str, record: &GenerationRecord) -> Result<(), GatewayError> {
        if let Some(path) = self.path(key) {
            let dir = self.dir.as_ref().expect("path implies dir");
            let io = |e: std::io::Error| GatewayError::Cache(format!("{}: {e}", path.display()));
            let mut tmp = NamedTempFile::new_in(dir).map_err(io)?;
            tmp.write_all(render_file(record).as_bytes()).map_err(io)?;
            tmp.persist(&path).map_err(|e| io(e.error))?;
        }
        self.memory
            .lock()
            .unwrap()
            .insert(key.to_string(), record.clone());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.memory.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn one_line(s: &str) -> String {
    s.replace(['\n', '\r'], " ")
}

fn render_file(r: &GenerationRecord) -> String {
    let mut out = String::new();
    out.push_str(&format!("backend: {}\n", one_line(&r.backend)));
    out.push_str(&format!("model_id: {}\n", one_line(&r.model_id)));
    out.push_str(&format!("temperature: {:?}\n", r.temperature));
    out.push_str(&format!("max_tokens: {}\n", r.max_tokens));
    out.push_str(&format!("latency_ms: {}\n", r.latency_ms));
    if let Some(n) = r.prompt_tokens {
        out.push_str(&format!("prompt_tokens: {n}\n"));
    }
    if let Some(n) = r.completion_tokens {
        out.push_str(&format!("completion_tokens: {n}\n"));
    }
    out.push_str(&format!(
        "prompt_sha256: {}\n",
        hex::encode(Sha256::digest(r.prompt.as_bytes()))
    ));
    out.push('\n');
    out.push_str(&r.output);
    out
}

fn parse_file(text: &str, prompt: &str) -> Option<GenerationRecord> {
    let (head, body) = text.split_once("\n\n")?;
    let mut fields = HashMap::new();
    for line in head.lines() {
        let (k, v) = line.split_once(": ")?;
        fields.insert(k, v);
    }
    if fields.get("prompt_sha256").copied()? != hex::encode(Sha256::digest(prompt.as_bytes())) {
        return None;
    }
    Some(GenerationRecord {
        prompt: prompt.to_string(),
        output: body.to_string(),
        backend: fields.get("backend")?.to_string(),
        model_id: fields.get("model_id")?.to_string(),
        temperature: fields.get("temperature")?.parse().ok()?,
        max_tokens: fields.get("max_tokens")?.parse().ok()?,
        latency_ms: fields.get("latency_ms")?.parse().ok()?,
        prompt_tokens: fields.get("prompt_tokens").and_then(|v| v.parse().ok()),
        completion_tokens: fields.get("completion_tokens").and_then(|v| v.parse().ok()),
        cache_hit: true,
    })
}
