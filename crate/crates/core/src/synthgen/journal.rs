use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::pipeline::ItemOutcome;
use super::SynthError;

/// Finished per-document work, consulted before recomputing an item.
pub trait ItemStore: Sync {
    fn lookup(&self, doc_id: &str) -> Option<ItemOutcome>;
    fn record(&self, outcome: &ItemOutcome) -> Result<(), SynthError>;
}

#[derive(Debug, Default)]
pub struct MemoryStore {
    items: Mutex<BTreeMap<String, ItemOutcome>>,
}

impl MemoryStore {
    pub fn len(&self) -> usize {
        self.items.lock().unwrap_or_else(|p| p.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ItemStore for MemoryStore {
    fn lookup(&self, doc_id: &str) -> Option<ItemOutcome> {
        self.items.lock().unwrap_or_else(|p| p.into_inner()).get(doc_id).cloned()
    }

    fn record(&self, outcome: &ItemOutcome) -> Result<(), SynthError> {
        self.items
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .insert(outcome.doc_id.clone(), outcome.clone());
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    config_hash: String,
}

/// Append-only JSON-lines log of finished items.
///
/// The first line names the configuration hash; every other line is one
/// item outcome. Each line goes out in a single write followed by a flush,
/// so an interrupted run leaves at most one partial trailing line, which is
/// discarded on reopen.
#[derive(Debug)]
pub struct ProgressLog {
    path: PathBuf,
    file: Mutex<File>,
    done: BTreeMap<String, ItemOutcome>,
}

impl ProgressLog {
    /// Open or create the log. An existing log written for another
    /// configuration is an error.
    pub fn open(path: impl AsRef<Path>, config_hash: &str) -> Result<Self, SynthError> {
        let path = path.as_ref().to_path_buf();
        let io = |e: std::io::Error| SynthError::Journal(format!("{}: {e}", path.display()));
        let mut existing = String::new();
        if path.exists() {
            File::open(&path).and_then(|mut f| f.read_to_string(&mut existing)).map_err(io)?;
        }

        let mut done = BTreeMap::new();
        let mut good_len = 0usize;
        let mut header_ok = false;
        let mut offset = 0usize;
        for line in existing.split_inclusive('\n') {
            offset += line.len();
            if !line.ends_with('\n') {
                break;
            }
            if !header_ok {
                let header: Header = serde_json::from_str(line)
                    .map_err(|e| SynthError::Journal(format!("{}: bad header: {e}", path.display())))?;
                if header.config_hash != config_hash {
                    return Err(SynthError::Journal(format!(
                        "{} was written for config {} (current {config_hash})",
                        path.display(),
                        header.config_hash
                    )));
                }
                header_ok = true;
            } else {
                match serde_json::from_str::<ItemOutcome>(line) {
                    Ok(item) => {
                        done.insert(item.doc_id.clone(), item);
                    }
                    Err(_) => break,
                }
            }
            good_len = offset;
        }

        let file = OpenOptions::new().create(true).write(true).truncate(false).open(&path).map_err(io)?;
        file.set_len(good_len as u64).map_err(io)?;
        let mut file = OpenOptions::new().append(true).open(&path).map_err(io)?;
        if !header_ok {
            let header = serde_json::to_string(&Header {
                config_hash: config_hash.to_string(),
            })
            .map_err(|e| SynthError::Journal(e.to_string()))?;
            file.write_all(format!("{header}\n").as_bytes()).map_err(io)?;
            file.flush().map_err(io)?;
        }
        Ok(Self {
            path,
            file: Mutex::new(file),
            done,
        })
    }

    pub fn completed(&self) -> usize {
        self.done.len()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl ItemStore for ProgressLog {
    fn lookup(&self, doc_id: &str) -> Option<ItemOutcome> {
        self.done.get(doc_id).cloned()
    }

    fn record(&self, outcome: &ItemOutcome) -> Result<(), SynthError> {
        let mut line = serde_json::to_string(outcome).map_err(|e| SynthError::Journal(e.to_string()))?;
        line.push('\n');
        let mut file = self.file.lock().unwrap_or_else(|p| p.into_inner());
        file.write_all(line.as_bytes())
            .and_then(|_| file.flush())
            .map_err(|e| SynthError::Journal(format!("{}: {e}", self.path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(id: &str) -> ItemOutcome {
        ItemOutcome {
            doc_id: id.into(),
            records: Vec::new(),
            failures: Vec::new(),
            examples: Vec::new(),
            stats: BTreeMap::new(),
            truncation: None,
        }
    }

    #[test]
    fn reopen_keeps_complete_lines_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("progress.jsonl");
        {
            let log = ProgressLog::open(&path, "abc").unwrap();
            log.record(&outcome("d1")).unwrap();
            log.record(&outcome("d2")).unwrap();
        }
        // Simulate a write cut off mid-line.
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"doc_id\":\"d3\",\"rec").unwrap();
        drop(f);

        let log = ProgressLog::open(&path, "abc").unwrap();
        assert_eq!(log.completed(), 2);
        assert!(log.lookup("d2").is_some());
        assert!(log.lookup("d3").is_none());
        log.record(&outcome("d3")).unwrap();
        drop(log);
        assert_eq!(ProgressLog::open(&path, "abc").unwrap().completed(), 3);

        assert!(matches!(ProgressLog::open(&path, "other"), Err(SynthError::Journal(_))));
    }
}
