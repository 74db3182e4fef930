//! Multi-round tracking inference.
//!
//! A sequence is cut into windows. Each window becomes one single-turn
//! request whose prompt carries the boxes confirmed on the frame just before
//! the window, so the model can continue existing identities. Answers are
//! parsed with the canonical grammar and merged into a [`TrackSet`] per lane
//! (one lane per camera view).

mod http;
mod oracle;
mod replay;

use std::collections::{BTreeMap, BTreeSet};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bbox::{BBox, ImageSize};
use crate::dialogue::{
    referring_query, Turn, FORMAT_INSTRUCTIONS, QUERY_FIRST_FRAME, QUERY_NEW_OBJECTS, QUERY_TRACK,
};
use crate::grammar::{parse_response, render_id_line, FormatClass, ParsedResponse};
use crate::track::{Detection, Sequence, TrackId, TrackSet};

pub use http::{HttpBackend, API_KEY_ENV};
pub use oracle::{OracleBackend, OracleError, PerturbationConfig};
pub use replay::{read_transcript, write_transcript, ReplayBackend};

pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 2048;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendRequest {
    pub image_refs: Vec<String>,
    pub turns: Vec<Turn>,
    pub max_output_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("{0} (retryable)")]
    Retryable(String),
    #[error("{0}")]
    Terminal(String),
}

/// Anything that turns a chat request into assistant text. Implementations
/// must tolerate concurrent calls.
pub trait Backend: Send + Sync {
    fn complete(&self, request: &BackendRequest) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Attempts after the first one.
    pub retries: u32,
    /// Delay before the first retry; doubles on every further retry.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { retries: 3, base_delay: Duration::from_millis(500) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriverConfig {
    pub window_len: u32,
    pub max_output_tokens: u32,
    pub retry: RetryPolicy,
}

impl Default for DriverConfig {
    fn default() -> Self {
        Self { window_len: 16, max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS, retry: RetryPolicy::default() }
    }
}

/// What the model is asked to track.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Query {
    /// Every object.
    Mot,
    /// Objects matching a description.
    Referring(String),
}

/// One camera view of the sequence being tracked.
#[derive(Debug, Clone, PartialEq)]
pub struct Lane {
    pub label: String,
    pub sequence_id: String,
    pub frame_count: u32,
    pub image_size: ImageSize,
    pub images: Vec<String>,
    /// Boxes on the first frame handed to the model up front.
    pub init: Vec<(TrackId, BBox)>,
}

impl Lane {
    pub fn from_sequence(seq: &Sequence) -> Self {
        Self {
            label: seq.view_label().to_string(),
            sequence_id: seq.id().to_string(),
            frame_count: seq.gt.frame_count(),
            image_size: seq.gt.image_size(),
            images: seq.images.clone(),
            init: Vec::new(),
        }
    }
}

/// Identity bookkeeping across rounds.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrackerState {
    /// Live ids with their last confirmed `(frame, box)` per lane.
    pub active: BTreeMap<TrackId, BTreeMap<usize, (u32, BBox)>>,
    pub retired: BTreeSet<TrackId>,
    pub next_id: TrackId,
    /// Frames already covered, per lane.
    pub frames_emitted: Vec<u32>,
}

impl TrackerState {
    pub fn new(lanes: usize) -> Self {
        Self { next_id: 1, frames_emitted: vec![0; lanes], ..Default::default() }
    }

    fn allocate(&mut self) -> TrackId {
        let id = self.next_id;
        self.next_id += 1;
        self.active.entry(id).or_default();
        id
    }

    fn confirm(&mut self, id: TrackId, lane: usize, frame: u32, bbox: BBox) {
        self.active.entry(id).or_default().insert(lane, (frame, bbox));
    }

    fn retire(&mut self, id: TrackId) {
        self.active.remove(&id);
        self.retired.insert(id);
    }

    /// Live ids confirmed on exactly `frame` in `lane`, by id.
    pub fn boxes_at(&self, lane: usize, frame: u32) -> Vec<(TrackId, BBox)> {
        self.active
            .iter()
            .filter_map(|(id, lanes)| match lanes.get(&lane) {
                Some((f, b)) if *f == frame => Some((*id, *b)),
                _ => None,
            })
            .collect()
    }
}

/// Position of one request image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundFrame {
    pub lane: usize,
    pub frame: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MergeReport {
    /// Box regions that were not well formed or sat outside a valid frame block.
    pub malformed_regions: usize,
    /// Ids the answer used without introducing them.
    pub unknown_ids: usize,
    /// Repeated `(lane, frame, id)` boxes; the first one wins.
    pub duplicates: usize,
    pub allocated: Vec<TrackId>,
}

/// Folds one parsed answer into the tracker state.
///
/// `frames[n - 1]` locates `Frame n:` of the answer. Within a frame, `NEW:`
/// lines are handled first, then `ID` lines, then `GONE:`. A provisional id
/// on a `NEW:` line is an alias valid for the rest of the answer, or until
/// its object is declared `GONE:`. Ids that are neither aliased nor live
/// get a fresh id (and become aliases too).
pub fn merge_round_results(
    state: &mut TrackerState,
    parsed: &ParsedResponse,
    frames: &[RoundFrame],
) -> (Vec<(usize, Detection)>, MergeReport) {
    let mut report = MergeReport::default();
    let mut out = Vec::new();
    let mut alias: BTreeMap<TrackId, TrackId> = BTreeMap::new();
    let mut seen: BTreeSet<(usize, u32, TrackId)> = BTreeSet::new();
    let in_range = |f: Option<u32>| f.is_some_and(|n| n >= 1 && n as usize <= frames.len());

    let mut emit = |state: &mut TrackerState, report: &mut MergeReport, rf: RoundFrame, id: TrackId, b: BBox| {
        if seen.insert((rf.lane, rf.frame, id)) {
            state.confirm(id, rf.lane, rf.frame, b);
            out.push((rf.lane, Detection::new(rf.frame, Some(id), b)));
        } else {
            report.duplicates += 1;
        }
    };

    for (idx, rf) in frames.iter().enumerate() {
        let n = Some(idx as u32 + 1);
        for obj in parsed.declared_new_objects.iter().filter(|o| o.frame == n) {
            let Some(b) = obj.bbox.filter(|_| obj.format_class == FormatClass::WellFormed) else {
                report.malformed_regions += 1;
                continue;
            };
            let live = obj.provisional_id.and_then(|p| alias.get(&p).copied()).filter(|id| !state.retired.contains(id));
            let id = match live {
                Some(id) => id,
                None => {
                    let id = state.allocate();
                    report.allocated.push(id);
                    if let Some(p) = obj.provisional_id {
                        alias.insert(p, id);
                    }
                    id
                }
            };
            emit(state, &mut report, *rf, id, b);
        }
        for e in parsed.entries.iter().filter(|e| e.frame == n) {
            let Some(b) = e.bbox.filter(|_| e.format_class == FormatClass::WellFormed) else {
                report.malformed_regions += 1;
                continue;
            };
            let id = match e.object_id {
                Some(k) if alias.get(&k).is_some_and(|id| !state.retired.contains(id)) => alias[&k],
                Some(k) if state.active.contains_key(&k) => k,
                other => {
                    report.unknown_ids += 1;
                    let id = state.allocate();
                    report.allocated.push(id);
                    if let Some(k) = other {
                        alias.insert(k, id);
                    }
                    id
                }
            };
            emit(state, &mut report, *rf, id, b);
        }
        for g in parsed.declared_disappeared.iter().filter(|g| g.frame == n) {
            let id = alias.get(&g.object_id).copied().unwrap_or(g.object_id);
            if state.active.contains_key(&id) {
                state.retire(id);
            }
        }
    }
    report.malformed_regions += parsed.entries.iter().filter(|e| !in_range(e.frame)).count();
    report.malformed_regions += parsed.declared_new_objects.iter().filter(|o| !in_range(o.frame)).count();
    (out, report)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub rounds: usize,
    /// Answers with at least one malformed region.
    pub malformed_responses: usize,
    pub unknown_ids: usize,
    pub duplicates: usize,
}

/// One request/response pair, as written to transcript files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub sequence: String,
    pub round: usize,
    pub attempts: u32,
    pub request: BackendRequest,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    /// One track set per lane.
    pub tracks: Vec<TrackSet>,
    pub stats: RunStats,
    pub transcript: Vec<TranscriptEntry>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DriverError {
    #[error("invalid driver input: {0}")]
    InvalidInput(String),
    #[error("{sequence}: round {round} failed after {attempts} attempt(s): {source}")]
    Backend { sequence: String, round: usize, attempts: u32, source: BackendError },
}

/// Calls the backend, retrying retryable failures with exponential backoff.
/// Returns the text and the number of attempts made.
pub fn complete_with_retry(
    backend: &dyn Backend,
    request: &BackendRequest,
    policy: &RetryPolicy,
) -> Result<(String, u32), (BackendError, u32)> {
    let mut attempt = 0;
    loop {
        attempt += 1;
        match backend.complete(request) {
            Ok(text) => return Ok((text, attempt)),
            Err(BackendError::Retryable(msg)) if attempt <= policy.retries => {
                let delay = policy.base_delay * 2u32.pow(attempt - 1);
                log::warn!("attempt {attempt} failed: {msg}; retrying in {delay:?}");
                thread::sleep(delay);
            }
            Err(e) => return Err((e, attempt)),
        }
    }
}

/// Frames per lane per round: the whole window for one lane, an equal share
/// for several views.
pub fn frames_per_round(window_len: u32, lanes: usize) -> u32 {
    (window_len / lanes.max(1) as u32).max(1)
}

fn prior_lines(boxes: &[(TrackId, BBox)]) -> Vec<String> {
    boxes.iter().map(|(id, b)| render_id_line(*id, b)).collect()
}

fn build_prompt(query: &Query, lanes: &[Lane], priors: &[Vec<(TrackId, BBox)>], spans: &[(usize, u32, u32)]) -> String {
    let mut parts: Vec<String> = Vec::new();
    if lanes.len() == 1 {
        let prior = prior_lines(&priors[0]);
        match query {
            Query::Mot if prior.is_empty() => {
                parts.extend([QUERY_FIRST_FRAME.to_string(), QUERY_TRACK.to_string()]);
            }
            Query::Mot => parts.push(QUERY_TRACK.to_string()),
            Query::Referring(text) => parts.push(referring_query(text)),
        }
        parts.extend(prior);
    } else {
        parts.push(match query {
            Query::Mot => QUERY_TRACK.to_string(),
            Query::Referring(text) => referring_query(text),
        });
        for &(lane, first, last) in spans {
            parts.push(format!("View {}:", lanes[lane].label));
            parts.push(format!("Images {first}-{last}."));
            parts.extend(prior_lines(&priors[lane]));
        }
    }
    parts.push(QUERY_NEW_OBJECTS.to_string());
    parts.push(FORMAT_INSTRUCTIONS.to_string());
    parts.join("\n")
}

/// Runs all rounds for one sequence (all views of it, for cross-view runs).
pub fn run_sequence(lanes: &[Lane], query: &Query, backend: &dyn Backend, cfg: &DriverConfig) -> Result<RunOutcome, DriverError> {
    if cfg.window_len < 2 {
        return Err(DriverError::InvalidInput(format!("window length must be at least 2, got {}", cfg.window_len)));
    }
    if lanes.is_empty() {
        return Err(DriverError::InvalidInput("no frames to track".into()));
    }
    for lane in lanes {
        if lane.frame_count == 0 || lane.images.len() != lane.frame_count as usize {
            return Err(DriverError::InvalidInput(format!(
                "{}: {} images for {} frames",
                lane.sequence_id,
                lane.images.len(),
                lane.frame_count
            )));
        }
    }
    let name = lanes.iter().map(|l| l.sequence_id.as_str()).collect::<Vec<_>>().join("+");
    let per_round = frames_per_round(cfg.window_len, lanes.len());
    let longest = lanes.iter().map(|l| l.frame_count).max().unwrap_or(0);
    let rounds = longest.div_ceil(per_round) as usize;

    let mut state = TrackerState::new(lanes.len());
    for (l, lane) in lanes.iter().enumerate() {
        for (id, b) in &lane.init {
            state.confirm(*id, l, 0, *b);
            state.next_id = state.next_id.max(id + 1);
        }
    }
    let mut tracks: Vec<TrackSet> =
        lanes.iter().map(|l| TrackSet::new(l.sequence_id.clone(), l.frame_count, l.image_size)).collect();
    let mut stats = RunStats::default();
    let mut transcript = Vec::new();

    for round in 0..rounds {
        let start = round as u32 * per_round;
        let mut frames = Vec::new();
        let mut spans = Vec::new();
        let mut priors = vec![Vec::new(); lanes.len()];
        for (l, lane) in lanes.iter().enumerate() {
            let end = (start + per_round).min(lane.frame_count);
            if start >= end {
                continue;
            }
            priors[l] = if start == 0 { lane.init.clone() } else { state.boxes_at(l, start - 1) };
            spans.push((l, frames.len() as u32 + 1, frames.len() as u32 + end - start));
            frames.extend((start..end).map(|frame| RoundFrame { lane: l, frame }));
        }
        let request = BackendRequest {
            image_refs: frames.iter().map(|rf| lanes[rf.lane].images[rf.frame as usize].clone()).collect(),
            turns: vec![Turn::user(build_prompt(query, lanes, &priors, &spans))],
            max_output_tokens: cfg.max_output_tokens,
        };
        let (response, attempts) = complete_with_retry(backend, &request, &cfg.retry).map_err(|(source, attempts)| {
            DriverError::Backend { sequence: name.clone(), round: round + 1, attempts, source }
        })?;
        let parsed = parse_response(&response);
        let (dets, report) = merge_round_results(&mut state, &parsed, &frames);
        for (lane, d) in dets {
            let id = d.track_id.expect("merged detections carry ids");
            if tracks[lane].insert(id, d.frame_index, d.bbox).is_err() {
                stats.duplicates += 1;
            }
        }
        for (l, lane) in lanes.iter().enumerate() {
            state.frames_emitted[l] = (start + per_round).min(lane.frame_count).max(state.frames_emitted[l]);
        }
        stats.rounds += 1;
        stats.unknown_ids += report.unknown_ids;
        stats.duplicates += report.duplicates;
        if report.malformed_regions > 0 {
            stats.malformed_responses += 1;
        }
        transcript.push(TranscriptEntry { sequence: name.clone(), round: round + 1, attempts, request, response });
    }
    Ok(RunOutcome { tracks, stats, transcript })
}
