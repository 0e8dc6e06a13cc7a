//! Append-only score cache journal.
//!
//! One JSON record per line keyed by the digest of (model, mode,
//! template, text). Warm lookups must return exactly what was stored, so
//! a cached run and a cold run produce identical verdicts; records are
//! flushed as they are written so a crashed run loses at most its final
//! line.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use benchleak_core::scoring::{CacheKey, CachedScore, ScoreCache, ScoreError, ScoringMode};

#[derive(Debug, Serialize, Deserialize)]
struct CacheRecord {
    key_hash: String,
    model_id: String,
    mode: ScoringMode,
    template_hash: String,
    text_hash: String,
    logprob: f64,
    token_count: u32,
}

/// Disk-backed [`ScoreCache`].
pub struct JsonlCache {
    path: PathBuf,
    entries: HashMap<String, CachedScore>,
    writer: BufWriter<File>,
}

impl JsonlCache {
    /// Open (or create) a journal and load every intact record. A
    /// truncated final line — the signature of a killed run — is skipped
    /// with a warning rather than poisoning the whole journal.
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (idx, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheRecord>(&line) {
                    Ok(record) => {
                        entries.insert(
                            record.key_hash,
                            CachedScore {
                                logprob: record.logprob,
                                token_count: record.token_count,
                            },
                        );
                    }
                    Err(err) => {
                        eprintln!(
                            "warning: {}:{}: skipping unreadable cache record: {err}",
                            path.display(),
                            idx + 1
                        );
                    }
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            entries,
            writer: BufWriter::new(file),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl ScoreCache for JsonlCache {
    fn get(&self, key: &CacheKey) -> Option<CachedScore> {
        self.entries.get(&key.key_hash()).copied()
    }

    fn put(&mut self, key: &CacheKey, value: CachedScore) -> Result<(), ScoreError> {
        let key_hash = key.key_hash();
        if self.entries.contains_key(&key_hash) {
            return Ok(());
        }
        let record = CacheRecord {
            key_hash: key_hash.clone(),
            model_id: key.model_id.clone(),
            mode: key.mode,
            template_hash: key.template_hash.clone(),
            text_hash: key.text_hash.clone(),
            logprob: value.logprob,
            token_count: value.token_count,
        };
        let line = serde_json::to_string(&record).expect("cache record serializes");
        writeln!(self.writer, "{line}")
            .and_then(|()| self.writer.flush())
            .map_err(|e| ScoreError::Cache {
                message: format!("cannot append to {}: {e}", self.path.display()),
            })?;
        self.entries.insert(key_hash, value);
        Ok(())
    }
}
