//! Append-only JSONL prediction log; one line per completed request.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub item_id: String,
    pub raw_response: String,
    pub parsed_letter: Option<char>,
    pub gold: char,
    pub correct: bool,
    pub latency_seconds: f64,
    pub request_images: usize,
    /// Set when the request itself failed; the item scores as incorrect.
    #[serde(default)]
    pub error: Option<String>,
}

pub struct PredictionStore {
    path: PathBuf,
    file: Mutex<File>,
    existing: HashMap<String, Prediction>,
}

impl PredictionStore {
    /// Opens (or creates) the log and loads the latest record per item.
    /// A torn final line from an interrupted write is ignored.
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut existing = HashMap::new();
        let mut needs_newline = false;
        if path.exists() {
            let text = fs::read_to_string(path)?;
            needs_newline = !text.is_empty() && !text.ends_with('\n');
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                if let Ok(p) = serde_json::from_str::<Prediction>(line) {
                    existing.insert(p.item_id.clone(), p);
                }
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        if needs_newline {
            file.write_all(b"\n")?;
        }
        Ok(PredictionStore {
            path: path.to_path_buf(),
            file: Mutex::new(file),
            existing,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Records loaded at open time, keyed by item id.
    pub fn completed(&self) -> &HashMap<String, Prediction> {
        &self.existing
    }

    pub fn append(&self, p: &Prediction) -> Result<()> {
        let mut line = serde_json::to_vec(p)?;
        line.push(b'\n');
        let mut f = self.file.lock().expect("store lock poisoned");
        f.write_all(&line)?;
        f.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(id: &str, err: Option<&str>) -> Prediction {
        Prediction {
            item_id: id.into(),
            raw_response: "A".into(),
            parsed_letter: Some('A'),
            gold: 'A',
            correct: true,
            latency_seconds: 0.1,
            request_images: 2,
            error: err.map(String::from),
        }
    }

    #[test]
    fn reopen_keeps_latest_and_skips_torn_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        {
            let s = PredictionStore::open(&path).unwrap();
            s.append(&pred("a", Some("boom"))).unwrap();
            s.append(&pred("a", None)).unwrap();
            s.append(&pred("b", None)).unwrap();
        }
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(br#"{"item_id":"c","raw_"#).unwrap();
        drop(f);

        let s = PredictionStore::open(&path).unwrap();
        assert_eq!(s.completed().len(), 2);
        assert!(s.completed()["a"].error.is_none());
        s.append(&pred("c", None)).unwrap();
        drop(s);
        let s = PredictionStore::open(&path).unwrap();
        assert_eq!(s.completed().len(), 3);
    }
}
