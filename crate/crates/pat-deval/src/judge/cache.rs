//! Disk-backed completion cache: an append-only JSONL journal whose last
//! entry per key wins. Readers share a lock-free snapshot via `RwLock`;
//! appends are serialized.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::judge::ModelConfig;

pub const CACHE_FILE: &str = "completions.jsonl";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompletionCacheEntry {
    pub key: String,
    pub raw_response: String,
    pub created_at: DateTime<Utc>,
}

/// Digest of everything that determines a completion: the prompt hash plus
/// every sampling field. Fields are length-framed so distinct tuples can
/// never collide.
pub fn cache_key(content_hash: &str, config: &ModelConfig) -> String {
    let mut hasher = Sha256::new();
    let mut frame = |bytes: &[u8]| {
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(bytes);
    };
    frame(content_hash.as_bytes());
    frame(config.model_id.as_bytes());
    frame(&config.temperature.to_bits().to_le_bytes());
    frame(&config.top_k.map_or([0xff; 4], u32::to_le_bytes));
    frame(&config.top_p.map_or([0xff; 8], |p| p.to_bits().to_le_bytes()));
    frame(&config.max_output_tokens.to_le_bytes());
    hex::encode(hasher.finalize())
}

pub struct CompletionCache {
    path: PathBuf,
    entries: RwLock<HashMap<String, String>>,
    writer: Mutex<File>,
}

impl CompletionCache {
    /// Open (or create) the cache journal under `dir`, replaying existing
    /// entries. Torn or malformed lines are skipped.
    pub fn open(dir: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(CACHE_FILE);
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for line in reader.lines() {
                let line = line?;
                if let Ok(entry) = serde_json::from_str::<CompletionCacheEntry>(&line) {
                    entries.insert(entry.key, entry.raw_response);
                }
            }
        }
        let writer = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            path,
            entries: RwLock::new(entries),
            writer: Mutex::new(writer),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.entries.read().unwrap().get(key).cloned()
    }

    pub fn put(&self, key: String, raw_response: String) -> std::io::Result<()> {
        let entry = CompletionCacheEntry {
            key: key.clone(),
            raw_response: raw_response.clone(),
            created_at: Utc::now(),
        };
        let line = serde_json::to_string(&entry).expect("cache entry serializes");
        {
            let mut writer = self.writer.lock().unwrap();
            writeln!(writer, "{line}")?;
            writer.flush()?;
        }
        self.entries.write().unwrap().insert(key, raw_response);
        Ok(())
    }
}
