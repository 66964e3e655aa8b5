use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ComparisonOutcome;
use crate::error::{Error, Result};

/// Cache key for comparing `first` against `second` under `description`.
/// Each part is length-prefixed so no two inputs collide by concatenation.
pub fn digest(description: &str, first: &str, second: &str) -> String {
    let mut h = Sha256::new();
    for part in [description, first, second] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Serialize, Deserialize)]
struct Entry {
    digest: String,
    outcome: ComparisonOutcome,
}

/// Comparison outcomes keyed by (description, ids in canonical order),
/// optionally persisted as append-only JSON lines.
pub struct ComparisonCache {
    entries: Mutex<HashMap<String, ComparisonOutcome>>,
    file: Option<Mutex<File>>,
}

impl ComparisonCache {
    pub fn in_memory() -> Self {
        ComparisonCache { entries: Mutex::new(HashMap::new()), file: None }
    }

    /// Loads `path` if it exists and appends new outcomes to it. Unreadable
    /// lines are skipped; the last entry for a digest wins.
    pub fn open(path: &Path) -> Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
            for (n, line) in reader.lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<Entry>(&line) {
                    Ok(e) => {
                        entries.insert(e.digest, e.outcome);
                    }
                    Err(e) => warn!("{}:{}: skipping cache line: {e}", path.display(), n + 1),
                }
            }
        } else if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(ComparisonCache { entries: Mutex::new(entries), file: Some(Mutex::new(file)) })
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, description: &str, first: &str, second: &str) -> Option<ComparisonOutcome> {
        self.entries.lock().unwrap().get(&digest(description, first, second)).copied()
    }

    pub fn insert(&self, description: &str, first: &str, second: &str, outcome: ComparisonOutcome) -> Result<()> {
        let key = digest(description, first, second);
        if let Some(file) = &self.file {
            let line = serde_json::to_string(&Entry { digest: key.clone(), outcome }).expect("entry serializes");
            let mut f = file.lock().unwrap();
            writeln!(f, "{line}").map_err(|e| Error::io("comparison cache", e))?;
        }
        self.entries.lock().unwrap().insert(key, outcome);
        Ok(())
    }
}
