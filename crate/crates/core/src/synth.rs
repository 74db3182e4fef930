//! Seeded synthetic datasets: boxes moving at constant velocity, bouncing
//! off the image border, with some objects entering late or leaving early.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bbox::{BBox, ImageSize};
use crate::ingest::{write_sequence, write_view_groups, IngestError};
use crate::track::{CaptionGroundTruth, ReferringExpression, Sequence, SequenceMeta, TrackId, TrackSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Sequences, or view groups when `views > 1`.
    pub sequences: usize,
    pub frames: u32,
    pub max_objects: usize,
    pub width: u32,
    pub height: u32,
    pub views: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { sequences: 5, frames: 64, max_objects: 5, width: 1920, height: 1080, views: 1, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub sequences: Vec<Sequence>,
    pub view_groups: BTreeMap<String, Vec<String>>,
}

impl SynthDataset {
    pub fn write(&self, root: &Path) -> Result<(), IngestError> {
        for s in &self.sequences {
            write_sequence(root, s)?;
        }
        if !self.view_groups.is_empty() {
            write_view_groups(root, &self.view_groups)?;
        }
        Ok(())
    }

    /// Member sequences of each view group, in group order.
    pub fn groups(&self) -> Vec<Vec<&Sequence>> {
        self.view_groups
            .values()
            .map(|names| names.iter().filter_map(|n| self.sequences.iter().find(|s| s.id() == n)).collect())
            .collect()
    }
}

struct Motion {
    start: u32,
    end: u32,
    boxes: Vec<(f64, f64, f64, f64)>,
    leftward: bool,
}

fn reflect(mut p: f64, mut v: f64, hi: f64) -> (f64, f64) {
    p += v;
    if p < 0.0 {
        p = -p;
        v = -v;
    }
    if p > hi {
        p = 2.0 * hi - p;
        v = -v;
    }
    (p.clamp(0.0, hi), v)
}

fn motions(rng: &mut ChaCha8Rng, frames: u32, objects: usize) -> Vec<Motion> {
    let early = objects.div_ceil(2);
    (0..objects)
        .map(|k| {
            let start = if k < early || frames < 3 { 0 } else { rng.random_range(1..=(frames * 2 / 3).max(1)) };
            let end = if rng.random::<f64>() < 0.6 { frames - 1 } else { rng.random_range(start..frames) };
            let (w, h) = (rng.random_range(0.05..0.12), rng.random_range(0.15..0.3));
            let (mut x, mut y) = (rng.random_range(0.0..1.0 - w), rng.random_range(0.0..1.0 - h));
            let (mut vx, mut vy) = (rng.random_range(-0.006..0.006), rng.random_range(-0.003..0.003));
            let leftward = vx < 0.0;
            let mut boxes = Vec::new();
            for _ in start..=end {
                boxes.push((x, y, w, h));
                (x, vx) = reflect(x, vx, 1.0 - w);
                (y, vy) = reflect(y, vy, 1.0 - h);
            }
            Motion { start, end, boxes, leftward }
        })
        .collect()
}

const NUMBERS: [&str; 10] = ["no", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine"];

fn language(motions: &[Motion], frames: u32) -> (Vec<ReferringExpression>, CaptionGroundTruth) {
    let ids = |pred: &dyn Fn(&Motion) -> bool| -> BTreeSet<TrackId> {
        motions.iter().enumerate().filter(|(_, m)| pred(m)).map(|(k, _)| k as TrackId + 1).collect()
    };
    let expr = |id: &str, text: &str, targets| ReferringExpression { id: id.into(), text: text.into(), targets };
    let expressions = vec![
        expr("left", "people walking to the left", ids(&|m| m.leftward)),
        expr("right", "people walking to the right", ids(&|m| !m.leftward)),
        expr("late", "people who enter after the start", ids(&|m| m.start > 0)),
        expr("leave", "people who leave before the end", ids(&|m| m.end + 1 < frames)),
    ];
    let n = motions.len();
    let word = NUMBERS.get(n).copied().unwrap_or("many");
    let video_caption = format!("{word} {} walk across an open square", if n == 1 { "person" } else { "people" });
    let instances = motions
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let dir = if m.leftward { "left" } else { "right" };
            (k as TrackId + 1, format!("a person walking to the {dir} across the square"))
        })
        .collect();
    (expressions, CaptionGroundTruth { video_caption, instances })
}

fn tracks(
    name: &str,
    frames: u32,
    size: ImageSize,
    motions: &[Motion],
    keep: &dyn Fn(TrackId) -> bool,
    view: (f64, f64),
) -> TrackSet {
    let (offset, scale) = view;
    let mut ts = TrackSet::new(name, frames, size);
    for (k, m) in motions.iter().enumerate() {
        let id = k as TrackId + 1;
        if !keep(id) {
            continue;
        }
        for (f, &(x, y, w, h)) in (m.start..=m.end).zip(&m.boxes) {
            let b = BBox::new(offset + scale * x, y, scale * w, h).expect("synthetic boxes stay inside the image");
            ts.insert(id, f, b).expect("fresh frame");
        }
    }
    ts
}

/// Builds a dataset. With `views > 1` each group shares its identities
/// across views; later views may miss some of them.
pub fn synth_dataset(cfg: &SynthConfig) -> SynthDataset {
    let size = ImageSize::new(cfg.width.max(1), cfg.height.max(1)).expect("non-zero size");
    let frames = cfg.frames.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sequences = Vec::new();
    let mut view_groups = BTreeMap::new();
    for g in 0..cfg.sequences {
        let objects = rng.random_range(1..=cfg.max_objects.max(1));
        let m = motions(&mut rng, frames, objects);
        let (expressions, captions) = language(&m, frames);
        let group = format!("synth-{:02}", g + 1);
        if cfg.views <= 1 {
            let gt = tracks(&group, frames, size, &m, &|_| true, (0.0, 1.0));
            let meta = SequenceMeta { expressions, captions: Some(captions), ..SequenceMeta::new(&group) };
            sequences.push(Sequence::new(gt, meta));
            continue;
        }
        let mut members = Vec::new();
        for v in 0..cfg.views {
            let name = format!("{group}-{}", (b'A' + (v % 26) as u8) as char);
            let absent: BTreeSet<TrackId> =
                (2..=objects as TrackId).filter(|_| v > 0 && rng.random::<f64>() < 0.25).collect();
            let view = (0.1 * v as f64 / cfg.views as f64, 0.9);
            let gt = tracks(&name, frames, size, &m, &|id| !absent.contains(&id), view);
            let exprs = expressions
                .iter()
                .map(|e| ReferringExpression { targets: &e.targets - &absent, ..e.clone() })
                .collect();
            let mut caps = captions.clone();
            caps.instances.retain(|id, _| !absent.contains(id));
            let meta = SequenceMeta {
                view_id: Some(name.clone()),
                expressions: exprs,
                captions: Some(caps),
                ..SequenceMeta::new(&name)
            };
            sequences.push(Sequence::new(gt, meta));
            members.push(name);
        }
        view_groups.insert(group, members);
    }
    SynthDataset { sequences, view_groups }
}
