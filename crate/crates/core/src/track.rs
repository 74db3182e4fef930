//! Track containers shared by ground truth and predictions.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bbox::{BBox, ImageSize};

pub type TrackId = u32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TrackError {
    #[error("frame {frame} is outside sequence range 0..{frame_count}")]
    FrameOutOfRange { frame: u32, frame_count: u32 },
    #[error("track {id} already has a box at frame {frame}")]
    DuplicateBox { id: TrackId, frame: u32 },
    #[error("track id must be positive")]
    ZeroId,
    #[error("{what} references unknown track id {id}")]
    UnknownTrack { what: String, id: TrackId },
}

/// One box at one frame, optionally carrying an identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame_index: u32,
    pub track_id: Option<TrackId>,
    pub bbox: BBox,
    #[serde(default = "default_class")]
    pub class_label: String,
    pub visibility: Option<f64>,
}

fn default_class() -> String {
    "pedestrian".to_string()
}

impl Detection {
    pub fn new(frame_index: u32, track_id: Option<TrackId>, bbox: BBox) -> Self {
        Self {
            frame_index,
            track_id,
            bbox,
            class_label: default_class(),
            visibility: None,
        }
    }
}

/// All tracklets of one sequence: `track_id -> frame -> box`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSet {
    pub sequence_id: String,
    frame_count: u32,
    image_size: ImageSize,
    tracklets: BTreeMap<TrackId, BTreeMap<u32, BBox>>,
}

impl TrackSet {
    pub fn new(sequence_id: impl Into<String>, frame_count: u32, image_size: ImageSize) -> Self {
        Self {
            sequence_id: sequence_id.into(),
            frame_count,
            image_size,
            tracklets: BTreeMap::new(),
        }
    }

    /// An empty set with the same sequence geometry.
    pub fn empty_like(&self) -> Self {
        Self::new(self.sequence_id.clone(), self.frame_count, self.image_size)
    }

    pub fn frame_count(&self) -> u32 {
        self.frame_count
    }

    pub fn image_size(&self) -> ImageSize {
        self.image_size
    }

    pub fn insert(&mut self, id: TrackId, frame: u32, bbox: BBox) -> Result<(), TrackError> {
        if id == 0 {
            return Err(TrackError::ZeroId);
        }
        if frame >= self.frame_count {
            return Err(TrackError::FrameOutOfRange { frame, frame_count: self.frame_count });
        }
        let track = self.tracklets.entry(id).or_default();
        if track.contains_key(&frame) {
            return Err(TrackError::DuplicateBox { id, frame });
        }
        track.insert(frame, bbox);
        Ok(())
    }

    pub fn get(&self, id: TrackId, frame: u32) -> Option<&BBox> {
        self.tracklets.get(&id).and_then(|t| t.get(&frame))
    }

    pub fn contains_track(&self, id: TrackId) -> bool {
        self.tracklets.contains_key(&id)
    }

    pub fn track_ids(&self) -> impl Iterator<Item = TrackId> + '_ {
        self.tracklets.keys().copied()
    }

    pub fn tracklet(&self, id: TrackId) -> Option<&BTreeMap<u32, BBox>> {
        self.tracklets.get(&id)
    }

    pub fn tracklets(&self) -> &BTreeMap<TrackId, BTreeMap<u32, BBox>> {
        &self.tracklets
    }

    /// `(id, box)` pairs at `frame`, ordered by id.
    pub fn frame_boxes(&self, frame: u32) -> Vec<(TrackId, BBox)> {
        self.tracklets
            .iter()
            .filter_map(|(id, t)| t.get(&frame).map(|b| (*id, *b)))
            .collect()
    }

    /// Per-frame box lists for the whole sequence, built in one pass.
    pub fn by_frame(&self) -> Vec<Vec<(TrackId, BBox)>> {
        let mut frames = vec![Vec::new(); self.frame_count as usize];
        for (id, t) in &self.tracklets {
            for (f, b) in t {
                frames[*f as usize].push((*id, *b));
            }
        }
        frames
    }

    pub fn num_detections(&self) -> usize {
        self.tracklets.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.tracklets.is_empty()
    }

    pub fn detections(&self) -> Vec<Detection> {
        let mut out: Vec<Detection> = self
            .tracklets
            .iter()
            .flat_map(|(id, t)| t.iter().map(move |(f, b)| Detection::new(*f, Some(*id), *b)))
            .collect();
        out.sort_by_key(|d| (d.frame_index, d.track_id));
        out
    }

    /// Restricts to the given identities.
    pub fn filter_ids(&self, keep: &BTreeSet<TrackId>) -> Self {
        let mut out = self.empty_like();
        out.tracklets = self
            .tracklets
            .iter()
            .filter(|(id, _)| keep.contains(id))
            .map(|(id, t)| (*id, t.clone()))
            .collect();
        out
    }

    /// Applies an id relabeling; ids missing from `map` are kept.
    pub fn relabel(&self, map: &BTreeMap<TrackId, TrackId>) -> Result<Self, TrackError> {
        let mut out = self.empty_like();
        for (id, t) in &self.tracklets {
            let new_id = map.get(id).copied().unwrap_or(*id);
            for (f, b) in t {
                out.insert(new_id, *f, *b)?;
            }
        }
        Ok(out)
    }

    /// First and last frame of a tracklet.
    pub fn span(&self, id: TrackId) -> Option<(u32, u32)> {
        let t = self.tracklets.get(&id)?;
        Some((*t.keys().next()?, *t.keys().next_back()?))
    }
}

/// A natural-language description and the tracks it refers to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferringExpression {
    pub id: String,
    pub text: String,
    pub targets: BTreeSet<TrackId>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CaptionGroundTruth {
    pub video_caption: String,
    #[serde(default)]
    pub instances: BTreeMap<TrackId, String>,
}

/// Language annotations attached to a sequence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub sequence_id: String,
    pub view_id: Option<String>,
    #[serde(default)]
    pub expressions: Vec<ReferringExpression>,
    pub captions: Option<CaptionGroundTruth>,
}

impl SequenceMeta {
    pub fn new(sequence_id: impl Into<String>) -> Self {
        Self { sequence_id: sequence_id.into(), ..Default::default() }
    }

    pub fn expression(&self, id: &str) -> Option<&ReferringExpression> {
        self.expressions.iter().find(|e| e.id == id)
    }

    /// Checks that every referenced track exists in `tracks`.
    pub fn validate(&self, tracks: &TrackSet) -> Result<(), TrackError> {
        for e in &self.expressions {
            if let Some(id) = e.targets.iter().find(|id| !tracks.contains_track(**id)) {
                return Err(TrackError::UnknownTrack { what: format!("expression {}", e.id), id: *id });
            }
        }
        if let Some(c) = &self.captions {
            if let Some(id) = c.instances.keys().find(|id| !tracks.contains_track(**id)) {
                return Err(TrackError::UnknownTrack { what: "instance caption".into(), id: *id });
            }
        }
        Ok(())
    }
}

/// Image references as `{sequence}/{dir}/{frame:06}{ext}` with 1-based frame numbers.
pub fn image_refs(sequence_id: &str, dir: &str, ext: &str, frame_count: u32) -> Vec<String> {
    (1..=frame_count).map(|f| format!("{sequence_id}/{dir}/{f:06}{ext}")).collect()
}

/// Ground truth, annotations and per-frame image references of one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sequence {
    pub gt: TrackSet,
    pub meta: SequenceMeta,
    /// One reference per frame, relative to the dataset root.
    pub images: Vec<String>,
}

impl Sequence {
    /// Uses the MOTChallenge image layout (`img1/000001.jpg`).
    pub fn new(gt: TrackSet, meta: SequenceMeta) -> Self {
        let images = image_refs(&gt.sequence_id, "img1", ".jpg", gt.frame_count());
        Self { gt, meta, images }
    }

    pub fn id(&self) -> &str {
        &self.gt.sequence_id
    }

    /// Name used for this sequence in multi-view prompts.
    pub fn view_label(&self) -> &str {
        self.meta.view_id.as_deref().unwrap_or(&self.gt.sequence_id)
    }
}
