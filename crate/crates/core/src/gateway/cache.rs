//! Append-only response cache. Doubles as the run checkpoint: every completed
//! exchange is flushed to disk before the caller sees it.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ChatExchange;
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct CacheRecord {
    key: String,
    request_digest: String,
    response: String,
    timestamp: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Cache key over everything that determines a response.
pub fn cache_key(model: &str, exchange: &ChatExchange) -> String {
    let mut material = serde_json::json!({
        "model": model,
        "system": exchange.system_text,
        "user": exchange.user_text,
        "temperature": exchange.params.temperature,
        "max_tokens": exchange.params.max_output_tokens,
    });
    if exchange.reask > 0 {
        material["reask"] = exchange.reask.into();
    }
    sha256_hex(material.to_string().as_bytes())
}

pub struct ResponseCache {
    path: PathBuf,
    inner: Mutex<CacheState>,
}

struct CacheState {
    entries: HashMap<String, String>,
    file: File,
}

impl ResponseCache {
    /// Opens (or creates) a cache file. A truncated trailing record, as left
    /// by an interrupted write, is skipped.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut entries = HashMap::new();
        if path.exists() {
            let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
            for (i, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(|e| Error::io(&path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheRecord>(&line) {
                    Ok(rec) => {
                        entries.insert(rec.key, rec.response);
                    }
                    Err(e) => log::warn!(
                        "{}:{}: skipping unreadable cache record: {e}",
                        path.display(),
                        i + 1
                    ),
                }
            }
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        // Terminate a partial last line so the next record starts clean.
        if file.metadata().map(|m| m.len() > 0).unwrap_or(false) {
            let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            if bytes.last() != Some(&b'\n') {
                file.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
            }
        }
        Ok(ResponseCache {
            path,
            inner: Mutex::new(CacheState { entries, file }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.inner.lock().unwrap().entries.get(key).cloned()
    }

    pub fn insert(&self, key: &str, exchange: &ChatExchange, response: &str) -> Result<()> {
        let rec = CacheRecord {
            key: key.to_string(),
            request_digest: sha256_hex(exchange.user_text.as_bytes()),
            response: response.to_string(),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        let mut line = serde_json::to_string(&rec).expect("cache record serializes");
        line.push('\n');
        let mut state = self.inner.lock().unwrap();
        state
            .file
            .write_all(line.as_bytes())
            .and_then(|_| state.file.flush())
            .map_err(|e| Error::io(&self.path, e))?;
        state.entries.insert(rec.key, rec.response);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::DecodeParams;

    fn exchange(user: &str) -> ChatExchange {
        ChatExchange::new("sys", user, DecodeParams::deterministic(4))
    }

    #[test]
    fn persists_across_reopen_and_skips_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let key = cache_key("m", &exchange("hello"));
        {
            let c = ResponseCache::open(&path).unwrap();
            c.insert(&key, &exchange("hello"), "world").unwrap();
        }
        // Simulate a write cut off mid-record.
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"key\":\"abc\",\"resp").unwrap();
        drop(f);

        let c = ResponseCache::open(&path).unwrap();
        assert_eq!(c.get(&key).as_deref(), Some("world"));
        assert_eq!(c.len(), 1);
        let key2 = cache_key("m", &exchange("again"));
        c.insert(&key2, &exchange("again"), "ok").unwrap();
        drop(c);
        let c = ResponseCache::open(&path).unwrap();
        assert_eq!(c.get(&key2).as_deref(), Some("ok"));
    }

    #[test]
    fn key_depends_on_every_field() {
        let base = exchange("u");
        let k = cache_key("m", &base);
        assert_ne!(k, cache_key("m2", &base));
        assert_ne!(k, cache_key("m", &exchange("v")));
        let mut hot = base.clone();
        hot.params.temperature = 1.0;
        assert_ne!(k, cache_key("m", &hot));
        let mut sys = base.clone();
        sys.system_text = "other".into();
        assert_ne!(k, cache_key("m", &sys));
    }
}
