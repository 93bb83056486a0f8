//! Append-only score store.
//!
//! Each line is `{"crc":"<8 hex>","score":<ChoiceScore>}`; the CRC-32 covers
//! the exact bytes of the `score` value. Reopening replays the file with
//! last-write-wins per (scorer id, prompt id, fill id).

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::Deserialize;
use serde_json::value::RawValue;
use thiserror::Error;

use super::ChoiceScore;
use crate::corpus::{FillSet, Prompt};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("score store {} corrupt at line {line}: {reason}", path.display())]
    StoreCorrupt {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("io error on score store {}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

type Key = (String, String, String);

fn key(s: &ChoiceScore) -> Key {
    (s.scorer_id.clone(), s.prompt_id.clone(), s.fill_id.clone())
}

/// A (prompt, fill) pair still to be scored.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct WorkItem {
    pub prompt_id: String,
    pub fill_id: String,
}

struct Inner {
    scores: BTreeMap<Key, ChoiceScore>,
    writer: Option<BufWriter<File>>,
}

pub struct ScoreStore {
    path: Option<PathBuf>,
    inner: Mutex<Inner>,
}

#[derive(Deserialize)]
struct Line<'a> {
    crc: String,
    #[serde(borrow)]
    score: &'a RawValue,
}

fn encode(score: &ChoiceScore) -> String {
    let body = serde_json::to_string(score).expect("score serializes");
    format!(
        "{{\"crc\":\"{:08x}\",\"score\":{body}}}\n",
        crc32fast::hash(body.as_bytes())
    )
}

impl ScoreStore {
    /// A store with no backing file.
    pub fn in_memory() -> Self {
        ScoreStore {
            path: None,
            inner: Mutex::new(Inner {
                scores: BTreeMap::new(),
                writer: None,
            }),
        }
    }

    /// Opens (creating if needed) a store file. A final line cut short by a
    /// crash (no trailing newline, unparseable) is dropped and truncated
    /// away; any other bad line is `StoreCorrupt`.
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let io_err = |source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut raw = String::new();
        if path.exists() {
            File::open(path)
                .and_then(|mut f| f.read_to_string(&mut raw))
                .map_err(io_err)?;
        }
        let mut scores = BTreeMap::new();
        let mut good_len = 0;
        let mut offset = 0;
        for (i, line) in raw.split_inclusive('\n').enumerate() {
            let terminated = line.ends_with('\n');
            match Self::decode(line.trim_end_matches('\n')) {
                Ok(score) => {
                    scores.insert(key(&score), score);
                    good_len = offset + line.len();
                }
                Err(_) if !terminated => {
                    log::warn!(
                        "dropping torn final line {} of {}",
                        i + 1,
                        path.display()
                    );
                }
                Err(reason) => {
                    return Err(StoreError::StoreCorrupt {
                        path: path.to_path_buf(),
                        line: i + 1,
                        reason,
                    })
                }
            }
            offset += line.len();
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err)?;
        if good_len < raw.len() {
            file.set_len(good_len as u64).map_err(io_err)?;
        }
        Ok(ScoreStore {
            path: Some(path.to_path_buf()),
            inner: Mutex::new(Inner {
                scores,
                writer: Some(BufWriter::new(file)),
            }),
        })
    }

    fn decode(line: &str) -> Result<ChoiceScore, String> {
        let parsed: Line = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let body = parsed.score.get();
        let crc = format!("{:08x}", crc32fast::hash(body.as_bytes()));
        if crc != parsed.crc {
            return Err(format!("checksum mismatch: stored {}, computed {crc}", parsed.crc));
        }
        serde_json::from_str(body).map_err(|e| e.to_string())
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    fn io_err(&self, source: io::Error) -> StoreError {
        StoreError::Io {
            path: self.path.clone().unwrap_or_default(),
            source,
        }
    }

    /// Records a score. An identical record already present is a no-op.
    pub fn put(&self, score: &ChoiceScore) -> Result<(), StoreError> {
        let mut inner = self.inner.lock().expect("store lock poisoned");
        let k = key(score);
        if inner.scores.get(&k) == Some(score) {
            return Ok(());
        }
        if let Some(w) = inner.writer.as_mut() {
            w.write_all(encode(score).as_bytes())
                .map_err(|e| self.io_err(e))?;
        }
        inner.scores.insert(k, score.clone());
        Ok(())
    }

    pub fn flush(&self) -> Result<(), StoreError> {
        let mut inner = self.inner.lock().expect("store lock poisoned");
        if let Some(w) = inner.writer.as_mut() {
            w.flush().map_err(|e| self.io_err(e))?;
        }
        Ok(())
    }

    pub fn get(&self, scorer_id: &str, prompt_id: &str, fill_id: &str) -> Option<ChoiceScore> {
        let inner = self.inner.lock().expect("store lock poisoned");
        inner
            .scores
            .get(&(scorer_id.to_string(), prompt_id.to_string(), fill_id.to_string()))
            .cloned()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("store lock poisoned").scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// True when every fill of the prompt has a score under `scorer_id`.
    pub fn is_complete(&self, scorer_id: &str, prompt_id: &str, fills: &FillSet) -> bool {
        let inner = self.inner.lock().expect("store lock poisoned");
        fills.fills().iter().all(|f| {
            inner.scores.contains_key(&(
                scorer_id.to_string(),
                prompt_id.to_string(),
                f.id.clone(),
            ))
        })
    }

    /// Every (prompt, fill) pair in `prompts` × `fills` without a score.
    pub fn missing<'a>(
        &self,
        prompts: impl IntoIterator<Item = &'a Prompt>,
        fills: &FillSet,
        scorer_id: &str,
    ) -> Vec<WorkItem> {
        let inner = self.inner.lock().expect("store lock poisoned");
        let mut out = Vec::new();
        for p in prompts {
            for f in fills.fills() {
                let k = (scorer_id.to_string(), p.prompt_id.clone(), f.id.clone());
                if !inner.scores.contains_key(&k) {
                    out.push(WorkItem {
                        prompt_id: p.prompt_id.clone(),
                        fill_id: f.id.clone(),
                    });
                }
            }
        }
        out
    }

    /// Current scores in key order.
    pub fn scores(&self) -> Vec<ChoiceScore> {
        let inner = self.inner.lock().expect("store lock poisoned");
        inner.scores.values().cloned().collect()
    }

    /// Scores of one scorer, grouped by prompt id, fills in id order.
    pub fn by_prompt(&self, scorer_id: &str) -> BTreeMap<String, Vec<ChoiceScore>> {
        let inner = self.inner.lock().expect("store lock poisoned");
        let mut out: BTreeMap<String, Vec<ChoiceScore>> = BTreeMap::new();
        for ((sid, pid, _), s) in inner.scores.iter() {
            if sid == scorer_id {
                out.entry(pid.clone()).or_default().push(s.clone());
            }
        }
        out
    }

    /// Scorer ids present in the store.
    pub fn scorer_ids(&self) -> Vec<String> {
        let inner = self.inner.lock().expect("store lock poisoned");
        let mut ids: Vec<String> = inner.scores.keys().map(|(s, _, _)| s.clone()).collect();
        ids.dedup();
        ids
    }

    /// Canonical JSON Lines of the logical contents, independent of the order
    /// records were appended.
    pub fn canonical_dump(&self) -> String {
        self.scores().iter().map(encode).collect()
    }

    /// Rewrites the backing file in canonical order without superseded lines.
    pub fn compact(&self) -> Result<(), StoreError> {
        let Some(path) = self.path.clone() else {
            return Ok(());
        };
        let mut inner = self.inner.lock().expect("store lock poisoned");
        if let Some(w) = inner.writer.as_mut() {
            w.flush().map_err(|e| self.io_err(e))?;
        }
        let tmp = path.with_extension("compact.tmp");
        let body: String = inner.scores.values().map(encode).collect();
        std::fs::write(&tmp, body).map_err(|e| self.io_err(e))?;
        std::fs::rename(&tmp, &path).map_err(|e| self.io_err(e))?;
        let file = OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(|e| self.io_err(e))?;
        inner.writer = Some(BufWriter::new(file));
        Ok(())
    }
}

impl Drop for ScoreStore {
    fn drop(&mut self) {
        if let Ok(inner) = self.inner.get_mut() {
            if let Some(w) = inner.writer.as_mut() {
                let _ = w.flush();
            }
        }
    }
}
