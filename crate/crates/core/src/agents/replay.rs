//! JSON-lines transcripts: one record per completed request.

use std::collections::{BTreeMap, VecDeque};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AgentBackend, AgentError, AgentReply, AgentRequest, AgentRole, Message};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub role: AgentRole,
    /// Digest of the role and messages; replay matches on this.
    pub key: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub raw_text: String,
}

/// Lookup key for a request: temperature and seed do not take part.
pub fn request_key(req: &AgentRequest) -> String {
    let mut h = Sha256::new();
    h.update(req.role.as_str().as_bytes());
    for m in &req.messages {
        h.update([0u8]);
        h.update(serde_json::to_string(&m.speaker).expect("enum").as_bytes());
        h.update([0u8]);
        h.update(m.content.as_bytes());
    }
    hex::encode(h.finalize())
}

/// Wraps a backend and keeps every successful exchange.
pub struct Recorder {
    inner: Arc<dyn AgentBackend>,
    records: Mutex<Vec<TranscriptRecord>>,
}

impl Recorder {
    pub fn new(inner: Arc<dyn AgentBackend>) -> Self {
        Self { inner, records: Mutex::new(Vec::new()) }
    }

    pub fn take(&self) -> Vec<TranscriptRecord> {
        std::mem::take(&mut *self.records.lock().expect("recorder lock"))
    }

    pub fn len(&self) -> usize {
        self.records.lock().expect("recorder lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl AgentBackend for Recorder {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn complete(&self, req: &AgentRequest) -> Result<AgentReply, AgentError> {
        let reply = self.inner.complete(req)?;
        self.records.lock().expect("recorder lock").push(TranscriptRecord {
            role: req.role,
            key: request_key(req),
            messages: req.messages.clone(),
            temperature: req.temperature,
            raw_text: reply.raw_text.clone(),
        });
        Ok(reply)
    }
}

pub fn write_transcript(path: &Path, records: &[TranscriptRecord]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()
}

pub fn read_transcript(path: &Path) -> Result<Vec<TranscriptRecord>, AgentError> {
    let f = std::fs::File::open(path).map_err(|e| AgentError::Replay(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| AgentError::Replay(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| AgentError::Replay(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

/// Serves recorded replies. Identical requests are answered in recorded order.
pub struct ReplayBackend {
    replies: Mutex<BTreeMap<String, VecDeque<String>>>,
}

impl ReplayBackend {
    pub fn from_records(records: impl IntoIterator<Item = TranscriptRecord>) -> Self {
        let mut replies: BTreeMap<String, VecDeque<String>> = BTreeMap::new();
        for r in records {
            replies.entry(r.key).or_default().push_back(r.raw_text);
        }
        Self { replies: Mutex::new(replies) }
    }

    /// Loads one transcript file, or every `*.jsonl` under a directory.
    pub fn load(path: &Path) -> Result<Self, AgentError> {
        let mut files = Vec::new();
        if path.is_dir() {
            collect_jsonl(path, &mut files).map_err(|e| AgentError::Replay(e.to_string()))?;
            files.sort();
        } else {
            files.push(path.to_path_buf());
        }
        let mut records = Vec::new();
        for f in &files {
            records.extend(read_transcript(f)?);
        }
        Ok(Self::from_records(records))
    }

    pub fn remaining(&self) -> usize {
        self.replies.lock().expect("replay lock").values().map(VecDeque::len).sum()
    }
}

fn collect_jsonl(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            collect_jsonl(&p, out)?;
        } else if p.extension().is_some_and(|e| e == "jsonl") {
            out.push(p);
        }
    }
    Ok(())
}

impl AgentBackend for ReplayBackend {
    fn name(&self) -> &str {
        "replay"
    }

    fn complete(&self, req: &AgentRequest) -> Result<AgentReply, AgentError> {
        let key = request_key(req);
        let mut map = self.replies.lock().expect("replay lock");
        let text = map
            .get_mut(&key)
            .and_then(VecDeque::pop_front)
            .ok_or_else(|| AgentError::Replay(format!("no recorded {} reply for request {}", req.role, &key[..12])))?;
        Ok(AgentReply::text(text))
    }
}
