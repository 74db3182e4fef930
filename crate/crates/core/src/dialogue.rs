//! Training and inference dialogues for the tracking and captioning tasks.
//!
//! Every builder is pure given its inputs and seed. Targets are written in
//! the canonical answer grammar, so `parse_response` recovers the boxes they
//! encode.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bbox::BBox;
use crate::grammar::{render_bbox, render_id_line, CanonicalWriter};
use crate::track::{Detection, Sequence, TrackId, TrackSet};

pub const QUERY_FIRST_FRAME: &str = "Where are the objects located in the first frame?";
pub const QUERY_TRACK: &str = "Track the location of these objects in this sequence.";
pub const QUERY_NEW_OBJECTS: &str =
    "Are there any objects in the image sequence that were added midway through the sequence?";

pub const NO_NEW_OBJECTS: &str = "No.";
pub const NO_MATCH: &str = "None.";
pub const GONE_ANSWER: &str = "GONE";

/// Images per tracking sample.
pub const TRACKING_WINDOW: u32 = 16;
/// Images per captioning sample.
pub const CAPTION_WINDOW: u32 = 32;
/// Pixel budget per image; resizing is left to the serving backend.
pub const MAX_IMAGE_PIXELS: u64 = 28 * 28 * 646;

/// Appended to inference prompts so the model knows the answer grammar.
pub const FORMAT_INSTRUCTIONS: &str = "Answer with a \"Frame <n>:\" header for each image, then one \
\"ID <k>: <bbox>x,y,w,h</bbox>\" line per object using normalized top-left coordinates and size. \
Write \"NEW: ID <k>: <bbox>x,y,w,h</bbox>\" for an object seen for the first time and \"GONE: <k>\" \
when an object has left.";

pub fn referring_query(expression: &str) -> String {
    format!("Track the location of the objects matching the description \"{expression}\" in this sequence.")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Mot,
    Rmot,
    Crmot,
    VideoCaption,
    InstanceCaption,
    PretextDetection,
    PretextLocationPrediction,
    PretextReid,
}

impl TaskKind {
    pub const ALL: [TaskKind; 8] = [
        TaskKind::Mot,
        TaskKind::Rmot,
        TaskKind::Crmot,
        TaskKind::VideoCaption,
        TaskKind::InstanceCaption,
        TaskKind::PretextDetection,
        TaskKind::PretextLocationPrediction,
        TaskKind::PretextReid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Mot => "mot",
            TaskKind::Rmot => "rmot",
            TaskKind::Crmot => "crmot",
            TaskKind::VideoCaption => "video-caption",
            TaskKind::InstanceCaption => "instance-caption",
            TaskKind::PretextDetection => "pretext-detection",
            TaskKind::PretextLocationPrediction => "pretext-location-prediction",
            TaskKind::PretextReid => "pretext-reid",
        }
    }

    pub fn is_caption(self) -> bool {
        matches!(self, TaskKind::VideoCaption | TaskKind::InstanceCaption)
    }

    /// Largest number of images a sample of this kind may carry.
    pub fn window_cap(self) -> u32 {
        if self.is_caption() {
            CAPTION_WINDOW
        } else {
            TRACKING_WINDOW
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown task '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
}

impl Turn {
    pub fn user(text: impl Into<String>) -> Self {
        Self { role: Role::User, text: text.into() }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self { role: Role::Assistant, text: text.into() }
    }
}

/// Frames `start_frame + i * stride` for `i < length`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start_frame: u32,
    pub length: u32,
    #[serde(default = "one")]
    pub stride: u32,
}

fn one() -> u32 {
    1
}

impl Window {
    pub fn new(start_frame: u32, length: u32) -> Self {
        Self { start_frame, length, stride: 1 }
    }

    pub fn frames(&self) -> impl Iterator<Item = u32> + '_ {
        (0..self.length).map(move |i| self.start_frame + i * self.stride)
    }
}

/// An image region, for tasks that look at one person at a time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageCrop {
    pub image: String,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversationSample {
    pub task: TaskKind,
    pub images: Vec<String>,
    pub turns: Vec<Turn>,
    pub supervision: Option<String>,
    pub window: Window,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub sequence: String,
    /// Sample-local id to ground-truth id, when the sample relabels objects.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id_map: Option<BTreeMap<TrackId, TrackId>>,
    /// Anchor first, then candidates, for re-identification samples.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub crops: Vec<ImageCrop>,
}

impl ConversationSample {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("sample serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DialogueError {
    #[error("window has no frames")]
    EmptyWindow,
    #[error("window {start}+{length} exceeds the {frame_count} frames of {sequence}")]
    WindowOutOfRange { sequence: String, start: u32, length: u32, frame_count: u32 },
    #[error("{task} samples hold at most {cap} images, got {length}")]
    WindowTooLong { task: TaskKind, length: u32, cap: u32 },
    #[error("no objects in the first frame ({frame}) of the window")]
    EmptyFirstFrame { frame: u32 },
    #[error("unknown expression '{0}'")]
    UnknownExpression(String),
    #[error("views disagree on their expression sets")]
    InconsistentExpressions,
    #[error("cross-view samples need at least two views, got {0}")]
    TooFewViews(usize),
    #[error("missing caption ground truth: {0}")]
    MissingCaption(String),
    #[error("sequence {sequence} is too short for {task}: {reason}")]
    SequenceTooShort { sequence: String, task: TaskKind, reason: String },
}

/// Sample construction settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBuilder {
    pub tracking_window: u32,
    pub caption_window: u32,
    /// Chance that a location-prediction segment ends after the object left.
    pub p_disappear: f64,
    /// Candidates shown in a re-identification sample, the positive included.
    pub reid_candidates: usize,
}

impl Default for SampleBuilder {
    fn default() -> Self {
        Self { tracking_window: TRACKING_WINDOW, caption_window: CAPTION_WINDOW, p_disappear: 0.3, reid_candidates: 4 }
    }
}

/// Writes per-frame blocks for `ids` over `frames`, adding `GONE` once an
/// object has left for the rest of the frames. `frames` holds
/// `(frame number in the answer, frame index in gt)`.
fn write_track_blocks(
    w: &mut CanonicalWriter,
    gt: &TrackSet,
    ids: &[(TrackId, TrackId)],
    frames: &[(u32, u32)],
) {
    let mut seen: BTreeSet<TrackId> = BTreeSet::new();
    let mut gone: BTreeSet<TrackId> = BTreeSet::new();
    for (k, &(number, frame)) in frames.iter().enumerate() {
        w.frame(Some(number));
        for &(gt_id, label) in ids {
            if let Some(b) = gt.get(gt_id, frame) {
                w.id(label, *b);
                seen.insert(gt_id);
            }
        }
        for &(gt_id, label) in ids {
            let later = frames[k..].iter().any(|(_, f)| gt.get(gt_id, *f).is_some());
            if seen.contains(&gt_id) && !later && gone.insert(gt_id) {
                w.gone(label);
            }
        }
    }
}

/// One `ID k:` line per detection, ordered by id. Detections without an id
/// are written as bare boxes first.
pub fn render_target_response(detections: &[Detection]) -> String {
    let mut d: Vec<&Detection> = detections.iter().collect();
    d.sort_by_key(|d| d.track_id);
    d.iter()
        .map(|d| match d.track_id {
            Some(id) => render_id_line(id, &d.bbox),
            None => render_bbox(&d.bbox),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

impl SampleBuilder {
    fn check_window(&self, seq: &Sequence, task: TaskKind, window: Window, cap: u32) -> Result<(), DialogueError> {
        if window.length == 0 {
            return Err(DialogueError::EmptyWindow);
        }
        if window.length > cap {
            return Err(DialogueError::WindowTooLong { task, length: window.length, cap });
        }
        let last = window.start_frame as u64 + (window.length as u64 - 1) * window.stride as u64;
        if last >= seq.gt.frame_count() as u64 {
            return Err(DialogueError::WindowOutOfRange {
                sequence: seq.id().to_string(),
                start: window.start_frame,
                length: window.length,
                frame_count: seq.gt.frame_count(),
            });
        }
        Ok(())
    }

    fn images(seq: &Sequence, window: Window) -> Vec<String> {
        window.frames().map(|f| seq.images[f as usize].clone()).collect()
    }

    /// Three-query multi-object tracking dialogue. First-frame objects are
    /// shuffled with `seed` and renumbered `1..=n` in that order; objects
    /// entering later continue the numbering.
    pub fn build_mot_sample(&self, seq: &Sequence, window: Window, seed: u64) -> Result<ConversationSample, DialogueError> {
        self.check_window(seq, TaskKind::Mot, window, self.tracking_window)?;
        let gt = &seq.gt;
        let frames: Vec<u32> = window.frames().collect();
        let mut first: Vec<TrackId> = gt.frame_boxes(window.start_frame).into_iter().map(|(id, _)| id).collect();
        if first.is_empty() {
            return Err(DialogueError::EmptyFirstFrame { frame: window.start_frame });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        first.shuffle(&mut rng);

        let mut entrants: Vec<(u32, TrackId)> = Vec::new();
        for (k, f) in frames.iter().enumerate().skip(1) {
            for (id, _) in gt.frame_boxes(*f) {
                if !first.contains(&id) && !entrants.iter().any(|(_, e)| *e == id) {
                    entrants.push((k as u32 + 1, id));
                }
            }
        }
        let first_labels: Vec<(TrackId, TrackId)> =
            first.iter().enumerate().map(|(i, id)| (*id, i as TrackId + 1)).collect();
        let mut id_map: BTreeMap<TrackId, TrackId> = first_labels.iter().map(|(g, l)| (*l, *g)).collect();

        let mut w1 = CanonicalWriter::new();
        for (gt_id, label) in &first_labels {
            w1.id(*label, *gt.get(*gt_id, window.start_frame).expect("first-frame box"));
        }
        let first_text = w1.render();

        let mut w2 = CanonicalWriter::new();
        let numbered: Vec<(u32, u32)> = frames.iter().enumerate().map(|(k, f)| (k as u32 + 1, *f)).collect();
        write_track_blocks(&mut w2, gt, &first_labels, &numbered);
        let track_text = w2.render();

        let new_text = if entrants.is_empty() {
            NO_NEW_OBJECTS.to_string()
        } else {
            let mut w3 = CanonicalWriter::new();
            for (i, (number, gt_id)) in entrants.iter().enumerate() {
                let label = (first.len() + i + 1) as TrackId;
                id_map.insert(label, *gt_id);
                let frame = frames[*number as usize - 1];
                w3.frame(Some(*number)).new_object(Some(label), *gt.get(*gt_id, frame).expect("entrant box"));
            }
            w3.render()
        };

        Ok(ConversationSample {
            task: TaskKind::Mot,
            images: Self::images(seq, window),
            turns: vec![
                Turn::user(QUERY_FIRST_FRAME),
                Turn::assistant(first_text.clone()),
                Turn::user(format!("{QUERY_TRACK}\n{first_text}")),
                Turn::assistant(track_text.clone()),
                Turn::user(QUERY_NEW_OBJECTS),
                Turn::assistant(new_text),
            ],
            supervision: Some(track_text),
            window,
            seed,
            sequence: seq.id().to_string(),
            id_map: Some(id_map),
            crops: Vec::new(),
        })
    }

    /// Referring tracking: the expression replaces the first-frame boxes.
    /// Targets keep their ground-truth ids.
    pub fn build_rmot_sample(&self, seq: &Sequence, expression_id: &str, window: Window) -> Result<ConversationSample, DialogueError> {
        let expr = seq
            .meta
            .expression(expression_id)
            .ok_or_else(|| DialogueError::UnknownExpression(expression_id.to_string()))?;
        self.check_window(seq, TaskKind::Rmot, window, self.tracking_window)?;
        let ids: Vec<(TrackId, TrackId)> = expr.targets.iter().map(|id| (*id, *id)).collect();
        let numbered: Vec<(u32, u32)> = window.frames().enumerate().map(|(k, f)| (k as u32 + 1, f)).collect();
        let mut w = CanonicalWriter::new();
        write_track_blocks(&mut w, &seq.gt, &ids, &numbered);
        let target = if w.is_empty() { NO_MATCH.to_string() } else { w.render() };
        Ok(ConversationSample {
            task: TaskKind::Rmot,
            images: Self::images(seq, window),
            turns: vec![Turn::user(referring_query(&expr.text)), Turn::assistant(target.clone())],
            supervision: Some(target),
            window,
            seed: 0,
            sequence: seq.id().to_string(),
            id_map: None,
            crops: Vec::new(),
        })
    }

    /// Splits `total` images over views: `total / V` each, one extra for the
    /// first `total % V` views.
    pub fn split_views(total: u32, views: usize) -> Vec<u32> {
        let v = views as u32;
        (0..v).map(|i| total / v + u32::from(i < total % v)).collect()
    }

    /// Cross-view referring tracking. Each view's images form one block
    /// introduced by a `View <name>:` marker; ground-truth ids are global
    /// across views.
    pub fn build_crmot_sample(
        &self,
        views: &[Sequence],
        expression_id: &str,
        start_frame: u32,
        total_len: u32,
    ) -> Result<ConversationSample, DialogueError> {
        if views.len() < 2 {
            return Err(DialogueError::TooFewViews(views.len()));
        }
        let expr_ids = |s: &Sequence| s.meta.expressions.iter().map(|e| e.id.clone()).collect::<BTreeSet<_>>();
        if views.iter().any(|v| expr_ids(v) != expr_ids(&views[0])) {
            return Err(DialogueError::InconsistentExpressions);
        }
        let text = views[0]
            .meta
            .expression(expression_id)
            .ok_or_else(|| DialogueError::UnknownExpression(expression_id.to_string()))?
            .text
            .clone();
        if total_len > self.tracking_window {
            return Err(DialogueError::WindowTooLong { task: TaskKind::Crmot, length: total_len, cap: self.tracking_window });
        }
        let lens = Self::split_views(total_len, views.len());
        let mut images = Vec::new();
        let mut markers = Vec::new();
        let mut w = CanonicalWriter::new();
        let mut number = 1u32;
        for (view, len) in views.iter().zip(&lens) {
            if *len == 0 {
                continue;
            }
            let win = Window::new(start_frame, *len);
            self.check_window(view, TaskKind::Crmot, win, self.tracking_window)?;
            let targets = &view.meta.expression(expression_id).expect("checked above").targets;
            let ids: Vec<(TrackId, TrackId)> = targets.iter().map(|id| (*id, *id)).collect();
            let numbered: Vec<(u32, u32)> = win.frames().enumerate().map(|(k, f)| (number + k as u32, f)).collect();
            markers.push(format!("View {}:\nImages {}-{}.", view.view_label(), number, number + len - 1));
            w.view(Some(view.view_label().to_string()));
            write_track_blocks(&mut w, &view.gt, &ids, &numbered);
            images.extend(Self::images(view, win));
            number += len;
        }
        let target = if w.is_empty() { NO_MATCH.to_string() } else { w.render() };
        let user = format!("{}\n{}", referring_query(&text), markers.join("\n"));
        Ok(ConversationSample {
            task: TaskKind::Crmot,
            images,
            turns: vec![Turn::user(user), Turn::assistant(target.clone())],
            supervision: Some(target),
            window: Window::new(start_frame, total_len),
            seed: 0,
            sequence: views.iter().map(|v| v.id()).collect::<Vec<_>>().join("+"),
            id_map: None,
            crops: Vec::new(),
        })
    }

    /// Video captions sample the whole sequence evenly; instance captions use
    /// consecutive frames from the object's first appearance.
    pub fn build_caption_sample(
        &self,
        seq: &Sequence,
        kind: TaskKind,
        track_id: Option<TrackId>,
    ) -> Result<ConversationSample, DialogueError> {
        let captions = seq
            .meta
            .captions
            .as_ref()
            .ok_or_else(|| DialogueError::MissingCaption(format!("sequence {}", seq.id())))?;
        let fc = seq.gt.frame_count();
        let cap = self.caption_window;
        let (window, user, caption) = match (kind, track_id) {
            (TaskKind::VideoCaption, _) => {
                let stride = (fc / cap).max(1);
                let window = Window { start_frame: 0, length: cap.min(fc.div_ceil(stride)), stride };
                (window, "Describe what happens in this video.".to_string(), captions.video_caption.clone())
            }
            (TaskKind::InstanceCaption, Some(id)) => {
                let caption = captions
                    .instances
                    .get(&id)
                    .ok_or_else(|| DialogueError::MissingCaption(format!("track {id} in {}", seq.id())))?;
                let (first, _) = seq
                    .gt
                    .span(id)
                    .ok_or_else(|| DialogueError::MissingCaption(format!("track {id} has no boxes in {}", seq.id())))?;
                let bbox = seq.gt.get(id, first).expect("span start has a box");
                let window = Window::new(first, cap.min(fc - first));
                let user = format!("Describe the person at {} in the first frame.", render_bbox(bbox));
                (window, user, caption.clone())
            }
            (TaskKind::InstanceCaption, None) => {
                return Err(DialogueError::MissingCaption("instance captions need a track id".into()));
            }
            (other, _) => panic!("{other} is not a caption task"),
        };
        if window.length == 0 {
            return Err(DialogueError::EmptyWindow);
        }
        Ok(ConversationSample {
            task: kind,
            images: Self::images(seq, window),
            turns: vec![Turn::user(user), Turn::assistant(caption.clone())],
            supervision: Some(caption),
            window,
            seed: 0,
            sequence: seq.id().to_string(),
            id_map: None,
            crops: Vec::new(),
        })
    }

    /// Detection, location prediction and re-identification samples.
    /// `others` supplies cross-video negatives for re-identification.
    pub fn build_pretext_sample(
        &self,
        seq: &Sequence,
        kind: TaskKind,
        seed: u64,
        others: &[Sequence],
    ) -> Result<ConversationSample, DialogueError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let short = |reason: &str| DialogueError::SequenceTooShort {
            sequence: seq.id().to_string(),
            task: kind,
            reason: reason.to_string(),
        };
        let gt = &seq.gt;
        let base = |window: Window, images: Vec<String>, turns: Vec<Turn>, target: String| ConversationSample {
            task: kind,
            images,
            turns,
            supervision: Some(target),
            window,
            seed,
            sequence: seq.id().to_string(),
            id_map: None,
            crops: Vec::new(),
        };
        match kind {
            TaskKind::PretextDetection => {
                let frames: Vec<u32> = (0..gt.frame_count()).filter(|f| !gt.frame_boxes(*f).is_empty()).collect();
                let frame = *frames.choose(&mut rng).ok_or_else(|| short("no annotated frame"))?;
                let dets: Vec<Detection> =
                    gt.frame_boxes(frame).into_iter().map(|(id, b)| Detection::new(frame, Some(id), b)).collect();
                let target = render_target_response(&dets);
                let user = "Detect every person in the image. Write one \"ID <k>: <bbox>x,y,w,h</bbox>\" line per person.";
                let window = Window::new(frame, 1);
                Ok(base(window, Self::images(seq, window), vec![Turn::user(user), Turn::assistant(target.clone())], target))
            }
            TaskKind::PretextLocationPrediction => {
                let cap = self.tracking_window;
                let movers: Vec<TrackId> =
                    gt.tracklets().iter().filter(|(_, t)| t.len() >= 2).map(|(id, _)| *id).collect();
                let leavers: Vec<TrackId> = gt
                    .tracklets()
                    .iter()
                    .filter(|(_, t)| t.keys().next_back().is_some_and(|l| *l + 1 < gt.frame_count()))
                    .map(|(id, _)| *id)
                    .collect();
                let disappear = !leavers.is_empty() && rng.random::<f64>() < self.p_disappear;
                let (id, start, end) = if disappear {
                    let id = *leavers.choose(&mut rng).expect("non-empty");
                    let frames: Vec<u32> = gt.tracklet(id).expect("known").keys().copied().collect();
                    let last = *frames.last().expect("non-empty");
                    let starts: Vec<u32> = frames.iter().copied().filter(|f| last - f + 2 <= cap).collect();
                    let start = *starts.choose(&mut rng).expect("last frame qualifies");
                    let end = rng.random_range(last + 1..=(start + cap - 1).min(gt.frame_count() - 1));
                    (id, start, end)
                } else {
                    let id = *movers.choose(&mut rng).ok_or_else(|| short("no track with two boxes"))?;
                    let frames: Vec<u32> = gt.tracklet(id).expect("known").keys().copied().collect();
                    let start_pos = rng.random_range(0..frames.len() - 1);
                    let start = frames[start_pos];
                    let ends: Vec<u32> =
                        frames[start_pos + 1..].iter().copied().filter(|f| f - start < cap).collect();
                    let end = *ends.choose(&mut rng).expect("next box is within the window");
                    (id, start, end)
                };
                let first = gt.get(id, start).expect("segment starts on a box");
                let target = match gt.get(id, end) {
                    Some(b) => render_bbox(b),
                    None => GONE_ANSWER.to_string(),
                };
                let user = format!(
                    "The person is at {} in the first image. Where is the person in the last image? \
                     Answer with <bbox>x,y,w,h</bbox>, or {GONE_ANSWER} if the person has left.",
                    render_bbox(first)
                );
                let window = Window::new(start, end - start + 1);
                Ok(base(window, Self::images(seq, window), vec![Turn::user(user), Turn::assistant(target.clone())], target))
            }
            TaskKind::PretextReid => {
                if gt.frame_count() < 2 || gt.tracklets().len() < 2 {
                    return Err(short("needs two frames and two identities"));
                }
                let anchors: Vec<TrackId> =
                    gt.tracklets().iter().filter(|(_, t)| t.len() >= 2).map(|(id, _)| *id).collect();
                let anchor_id = *anchors.choose(&mut rng).ok_or_else(|| short("no identity seen twice"))?;
                let pick_frame = |rng: &mut ChaCha8Rng, ts: &TrackSet, id: TrackId, not: Option<u32>| {
                    let frames: Vec<u32> =
                        ts.tracklet(id).expect("known").keys().copied().filter(|f| Some(*f) != not).collect();
                    *frames.choose(rng).expect("frame available")
                };
                let fa = pick_frame(&mut rng, gt, anchor_id, None);
                let fp = pick_frame(&mut rng, gt, anchor_id, Some(fa));
                let crop = |s: &Sequence, id: TrackId, f: u32| ImageCrop {
                    image: s.images[f as usize].clone(),
                    bbox: *s.gt.get(id, f).expect("box exists"),
                };
                let anchor = crop(seq, anchor_id, fa);
                let mut candidates = vec![(true, crop(seq, anchor_id, fp))];
                let same: Vec<TrackId> = gt.track_ids().filter(|id| *id != anchor_id).collect();
                let foreign: Vec<&Sequence> = others.iter().filter(|o| o.id() != seq.id() && !o.gt.is_empty()).collect();
                for slot in 1..self.reid_candidates.max(2) {
                    let negative = if slot % 2 == 0 && !foreign.is_empty() {
                        let o = *foreign.choose(&mut rng).expect("non-empty");
                        let ids: Vec<TrackId> = o.gt.track_ids().collect();
                        let id = *ids.choose(&mut rng).expect("non-empty");
                        crop(o, id, pick_frame(&mut rng, &o.gt, id, None))
                    } else {
                        let id = *same.choose(&mut rng).expect("two identities");
                        crop(seq, id, pick_frame(&mut rng, gt, id, None))
                    };
                    candidates.push((false, negative));
                }
                candidates.shuffle(&mut rng);
                let answer = candidates.iter().position(|(pos, _)| *pos).expect("positive present") + 1;
                let mut user = format!("Image 1 shows a person at {}.", render_bbox(&anchor.bbox));
                for (i, (_, c)) in candidates.iter().enumerate() {
                    user.push_str(&format!("\nCandidate {}: image {}, {}", i + 1, i + 2, render_bbox(&c.bbox)));
                }
                user.push_str("\nWhich candidate is the same person? Answer with the candidate number.");
                let mut crops = vec![anchor];
                crops.extend(candidates.into_iter().map(|(_, c)| c));
                let target = answer.to_string();
                let mut s = base(
                    Window::new(fa, 1),
                    crops.iter().map(|c| c.image.clone()).collect(),
                    vec![Turn::user(user), Turn::assistant(target.clone())],
                    target,
                );
                s.crops = crops;
                Ok(s)
            }
            other => panic!("{other} is not a pretext task"),
        }
    }
}
