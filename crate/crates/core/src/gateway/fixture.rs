//! Line-delimited fixture store.
//!
//! File layout, one JSON object per line:
//!
//! ```text
//! {"digest":"<64 hex>","task_tag":"summarize","reply":"...","timestamp":1760000000}
//! ```
//!
//! `reply` is a JSON string for chat calls and
//! `{"model_id": "...", "values": [f32, ...]}` for embeddings. When a digest
//! appears more than once the last line wins. Record mode loads the existing
//! file, serves digests it already holds, and appends new ones.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Digest, GatewayError, GatewayMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub digest: String,
    pub task_tag: String,
    pub reply: Value,
    pub timestamp: u64,
}

pub struct FixtureStore {
    path: PathBuf,
    entries: RwLock<HashMap<String, FixtureRecord>>,
    writer: Mutex<Option<File>>,
}

impl FixtureStore {
    /// Opens the store for `mode`. Replay requires the file to exist; record
    /// creates it when missing. Live mode does not use a store.
    pub fn open(path: impl AsRef<Path>, mode: GatewayMode) -> Result<Self, GatewayError> {
        let path = path.as_ref().to_path_buf();
        let err = |reason: String| GatewayError::FixtureStore {
            path: path.display().to_string(),
            reason,
        };
        let entries = match mode {
            GatewayMode::Live => return Err(err("live mode does not use a fixture store".into())),
            GatewayMode::Replay => {
                if !path.exists() {
                    return Err(err("file not found (replay mode requires recorded fixtures)".into()));
                }
                load(&path).map_err(err)?
            }
            GatewayMode::Record => {
                if path.exists() {
                    load(&path).map_err(err)?
                } else {
                    HashMap::new()
                }
            }
        };
        let writer = if mode == GatewayMode::Record {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent).map_err(|e| err(e.to_string()))?;
                }
            }
            Some(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&path)
                    .map_err(|e| err(e.to_string()))?,
            )
        } else {
            None
        };
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
        self.entries.read().expect("fixture lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, digest: &Digest) -> Option<FixtureRecord> {
        self.entries.read().expect("fixture lock").get(digest.as_str()).cloned()
    }

    /// Persists a reply. Writes are serialized; each record is one appended line.
    pub fn put(&self, digest: &Digest, task_tag: &str, reply: Value) -> Result<(), GatewayError> {
        let record = FixtureRecord {
            digest: digest.to_string(),
            task_tag: task_tag.to_string(),
            reply,
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        let mut line = serde_json::to_string(&record).expect("fixture record serializes");
        line.push('\n');
        let mut writer = self.writer.lock().expect("fixture writer lock");
        let file = writer.as_mut().ok_or_else(|| GatewayError::FixtureStore {
            path: self.path.display().to_string(),
            reason: "store opened read-only".into(),
        })?;
        file.write_all(line.as_bytes())
            .and_then(|_| file.flush())
            .map_err(|e| GatewayError::FixtureStore {
                path: self.path.display().to_string(),
                reason: e.to_string(),
            })?;
        self.entries
            .write()
            .expect("fixture lock")
            .insert(record.digest.clone(), record);
        Ok(())
    }

    /// All records sorted by digest.
    pub fn records(&self) -> Vec<FixtureRecord> {
        let mut v: Vec<FixtureRecord> = self.entries.read().expect("fixture lock").values().cloned().collect();
        v.sort_by(|a, b| a.digest.cmp(&b.digest));
        v
    }
}

fn load(path: &Path) -> Result<HashMap<String, FixtureRecord>, String> {
    let file = File::open(path).map_err(|e| e.to_string())?;
    let mut entries = HashMap::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: FixtureRecord = serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", n + 1))?;
        entries.insert(rec.digest.clone(), rec);
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replay_requires_existing_file() {
        let dir = tempfile::tempdir().unwrap();
        let err = FixtureStore::open(dir.path().join("missing.jsonl"), GatewayMode::Replay).err().unwrap();
        assert!(matches!(err, GatewayError::FixtureStore { .. }));
    }

    #[test]
    fn last_line_wins_and_records_are_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.jsonl");
        let store = FixtureStore::open(&p, GatewayMode::Record).unwrap();
        store.put(&Digest::from_hex("bb"), "t", Value::String("1".into())).unwrap();
        store.put(&Digest::from_hex("aa"), "t", Value::String("2".into())).unwrap();
        store.put(&Digest::from_hex("bb"), "t", Value::String("3".into())).unwrap();
        drop(store);
        let store = FixtureStore::open(&p, GatewayMode::Replay).unwrap();
        assert_eq!(store.len(), 2);
        let recs = store.records();
        assert_eq!(recs[0].digest, "aa");
        assert_eq!(recs[1].reply, Value::String("3".into()));
        assert!(store.put(&Digest::from_hex("cc"), "t", Value::Null).is_err());
    }

    #[test]
    fn corrupt_line_is_reported_with_its_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.jsonl");
        std::fs::write(&p, "{\"digest\":\"a\",\"task_tag\":\"t\",\"reply\":1,\"timestamp\":0}\n{oops\n").unwrap();
        let err = FixtureStore::open(&p, GatewayMode::Replay).err().unwrap();
        assert!(err.to_string().contains("line 2"), "{err}");
    }
}
