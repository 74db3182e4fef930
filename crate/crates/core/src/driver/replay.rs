use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use anyhow::Context;

use super::{Backend, BackendError, BackendRequest, TranscriptEntry};

/// Answers requests from a recorded transcript; no network access.
pub struct ReplayBackend {
    answers: HashMap<String, String>,
}

fn key(request: &BackendRequest) -> String {
    serde_json::to_string(request).expect("request serializes")
}

impl ReplayBackend {
    pub fn new(entries: &[TranscriptEntry]) -> Self {
        Self { answers: entries.iter().map(|e| (key(&e.request), e.response.clone())).collect() }
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }
}

impl Backend for ReplayBackend {
    fn complete(&self, request: &BackendRequest) -> Result<String, BackendError> {
        self.answers
            .get(&key(request))
            .cloned()
            .ok_or_else(|| BackendError::Terminal("request not found in transcript".into()))
    }
}

pub fn write_transcript(path: &Path, entries: &[TranscriptEntry]) -> anyhow::Result<()> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&serde_json::to_string(e)?);
        out.push('\n');
    }
    fs::write(path, out).with_context(|| format!("writing transcript {}", path.display()))
}

pub fn read_transcript(path: &Path) -> anyhow::Result<Vec<TranscriptEntry>> {
    let file = fs::File::open(path).with_context(|| format!("opening transcript {}", path.display()))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}: bad transcript line", path.display(), n + 1))?);
    }
    Ok(out)
}
