//! Ground-truth replay backend with controllable noise.
//!
//! The oracle answers each request from ground truth alone. It reads the
//! prior `ID k:` lines from the prompt, matches them to ground truth on the
//! frame before the window, and continues those ids; other objects are
//! introduced with `NEW:` lines. Noise is drawn from a generator seeded per
//! `(seed, sequence, frame)` and every box consumes the same draws whatever
//! the probabilities, so runs with different settings stay coupled.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Backend, BackendError, BackendRequest};
use crate::assignment::max_weight_assignment;
use crate::bbox::{iou, BBox};
use crate::dialogue::{Role, NO_MATCH};
use crate::grammar::{parse_response, render_bbox, FormatClass};
use crate::metrics::MATCH_THRESHOLD;
use crate::track::{Sequence, TrackId, TrackSet};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PerturbationConfig {
    pub jitter_sigma: f64,
    pub dropout_prob: f64,
    pub swap_prob: f64,
    pub format_corruption_prob: f64,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("{name} must be a probability, got {value}")]
    BadProbability { name: &'static str, value: f64 },
    #[error("jitter sigma must be finite and non-negative, got {0}")]
    BadSigma(f64),
    #[error("image {0} is listed by two sequences")]
    DuplicateImage(String),
}

impl PerturbationConfig {
    pub fn validate(&self) -> Result<(), OracleError> {
        for (name, value) in [
            ("dropout_prob", self.dropout_prob),
            ("swap_prob", self.swap_prob),
            ("format_corruption_prob", self.format_corruption_prob),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(OracleError::BadProbability { name, value });
            }
        }
        if !(self.jitter_sigma.is_finite() && self.jitter_sigma >= 0.0) {
            return Err(OracleError::BadSigma(self.jitter_sigma));
        }
        Ok(())
    }
}

struct OracleLane {
    label: String,
    gt: TrackSet,
    key: u64,
}

/// Deterministic stand-in for a model.
pub struct OracleBackend {
    lanes: Vec<OracleLane>,
    by_image: HashMap<String, (usize, u32)>,
    cfg: PerturbationConfig,
    responses: AtomicUsize,
    corrupted: AtomicUsize,
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

struct Draw {
    swap: f64,
    jitter: [f64; 4],
    drop: f64,
    corrupt: f64,
    style: f64,
}

impl Draw {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        let swap = rng.random();
        let jitter = [0; 4].map(|_| rng.sample(StandardNormal));
        Self { swap, jitter, drop: rng.random(), corrupt: rng.random(), style: rng.random() }
    }
}

/// A box written in one of the non-canonical styles.
fn corrupt_box(b: &BBox, style: f64) -> String {
    if style < 0.5 {
        format!("<bbox>{:.4} {:.4} {:.4} {:.4}</bbox>", b.x(), b.y(), b.x() + b.w(), b.y() + b.h())
    } else {
        format!("({:.4}, {:.4}, {:.4}, {:.4})", b.x(), b.y(), b.w(), b.h())
    }
}

impl OracleBackend {
    /// Each sequence's ground truth answers requests for its own images.
    /// For referring runs pass ground truth already restricted to the targets.
    pub fn new(sequences: &[Sequence], cfg: PerturbationConfig) -> Result<Self, OracleError> {
        cfg.validate()?;
        let mut by_image = HashMap::new();
        let mut lanes = Vec::new();
        for (l, seq) in sequences.iter().enumerate() {
            for (f, image) in seq.images.iter().enumerate() {
                if by_image.insert(image.clone(), (l, f as u32)).is_some() {
                    return Err(OracleError::DuplicateImage(image.clone()));
                }
            }
            lanes.push(OracleLane { label: seq.view_label().to_string(), gt: seq.gt.clone(), key: fnv1a(seq.id()) });
        }
        Ok(Self { lanes, by_image, cfg, responses: AtomicUsize::new(0), corrupted: AtomicUsize::new(0) })
    }

    pub fn responses(&self) -> usize {
        self.responses.load(Ordering::SeqCst)
    }

    /// Answers that contained at least one deliberately malformed box.
    pub fn corrupted_responses(&self) -> usize {
        self.corrupted.load(Ordering::SeqCst)
    }

    fn rng(&self, lane: usize, frame: u32) -> ChaCha8Rng {
        let k = splitmix(self.cfg.rng_seed ^ splitmix(self.lanes[lane].key ^ splitmix(frame as u64)));
        ChaCha8Rng::seed_from_u64(k)
    }

    /// Matches prompt boxes to ground truth on `frame` by IoU.
    fn match_prior(gt: &TrackSet, frame: u32, prior: &[(TrackId, BBox)]) -> Vec<(TrackId, TrackId)> {
        let truth = gt.frame_boxes(frame);
        let w: Vec<Vec<f64>> = truth.iter().map(|(_, g)| prior.iter().map(|(_, p)| iou(g, p)).collect()).collect();
        max_weight_assignment(&w)
            .into_iter()
            .filter(|&(i, j)| w[i][j] >= MATCH_THRESHOLD)
            .map(|(i, j)| (truth[i].0, prior[j].0))
            .collect()
    }

    fn answer(&self, request: &BackendRequest) -> Result<(String, bool), BackendError> {
        let prompt = request
            .turns
            .iter()
            .rev()
            .find(|t| t.role == Role::User)
            .ok_or_else(|| BackendError::Terminal("request has no user turn".into()))?;
        let frames: Vec<(usize, u32)> = request
            .image_refs
            .iter()
            .map(|r| self.by_image.get(r).copied().ok_or_else(|| BackendError::Terminal(format!("unknown image {r}"))))
            .collect::<Result<_, _>>()?;
        let mut lanes: Vec<usize> = Vec::new();
        for (l, _) in &frames {
            if !lanes.contains(l) {
                lanes.push(*l);
            }
        }
        let multi = lanes.len() > 1;

        let parsed = parse_response(&prompt.text);
        let mut label_of: BTreeMap<TrackId, TrackId> = BTreeMap::new();
        let mut max_prompt: TrackId = 0;
        for &l in &lanes {
            let lane = &self.lanes[l];
            let prior: Vec<(TrackId, BBox)> = parsed
                .entries
                .iter()
                .filter(|e| e.format_class == FormatClass::WellFormed)
                .filter(|e| if multi { e.view.as_deref() == Some(lane.label.as_str()) } else { e.view.is_none() })
                .filter_map(|e| Some((e.object_id?, e.bbox?)))
                .collect();
            max_prompt = prior.iter().map(|(id, _)| *id).fold(max_prompt, TrackId::max);
            let first = frames.iter().find(|(fl, _)| *fl == l).expect("lane has frames").1;
            for (gt_id, label) in Self::match_prior(&lane.gt, first.saturating_sub(1), &prior) {
                label_of.entry(gt_id).or_insert(label);
            }
        }
        let prompted: BTreeSet<TrackId> = label_of.keys().copied().collect();
        let mut next = max_prompt + 1;
        let mut first_seen: BTreeMap<TrackId, (usize, u32)> = BTreeMap::new();
        for &(l, f) in &frames {
            for (id, _) in self.lanes[l].gt.frame_boxes(f) {
                first_seen.entry(id).or_insert((l, f));
                label_of.entry(id).or_insert_with(|| {
                    next += 1;
                    next - 1
                });
            }
        }

        let cfg = &self.cfg;
        let mut lines: Vec<String> = Vec::new();
        let mut introduced: BTreeSet<TrackId> = BTreeSet::new();
        let mut any_box = false;
        let mut any_corrupt = false;
        let mut current_lane = None;
        for (idx, &(l, f)) in frames.iter().enumerate() {
            let lane = &self.lanes[l];
            if multi && current_lane != Some(l) {
                lines.push(format!("View {}:", lane.label));
                current_lane = Some(l);
            }
            lines.push(format!("Frame {}:", idx + 1));
            let truth = lane.gt.frame_boxes(f);
            let mut rng = self.rng(l, f);
            let draws: Vec<Draw> = truth.iter().map(|_| Draw::sample(&mut rng)).collect();
            let mut labels: Vec<TrackId> = truth.iter().map(|(id, _)| label_of[id]).collect();
            let eligible: Vec<bool> =
                truth.iter().map(|(id, _)| prompted.contains(id) || first_seen[id] != (l, f)).collect();
            for i in 1..truth.len() {
                if draws[i - 1].swap < cfg.swap_prob && eligible[i - 1] && eligible[i] {
                    labels.swap(i - 1, i);
                }
            }
            for (i, (_, b)) in truth.iter().enumerate() {
                let d = &draws[i];
                let b = if cfg.jitter_sigma > 0.0 {
                    let s = cfg.jitter_sigma;
                    BBox::saturating(
                        b.x() + s * d.jitter[0],
                        b.y() + s * d.jitter[1],
                        b.w() + s * d.jitter[2],
                        b.h() + s * d.jitter[3],
                    )
                } else {
                    *b
                };
                if d.drop < cfg.dropout_prob {
                    continue;
                }
                let corrupt = d.corrupt < cfg.format_corruption_prob;
                let text = if corrupt { corrupt_box(&b, d.style) } else { render_bbox(&b) };
                let label = labels[i];
                let is_new = label > max_prompt && introduced.insert(label);
                lines.push(if is_new { format!("NEW: ID {label}: {text}") } else { format!("ID {label}: {text}") });
                any_box = true;
                any_corrupt |= corrupt;
            }
            if !multi && f > 0 {
                for (id, _) in lane.gt.frame_boxes(f - 1) {
                    let ended = lane.gt.span(id).is_some_and(|(_, last)| last == f - 1);
                    let label = label_of.get(&id).copied();
                    let known = prompted.contains(&id) || label.is_some_and(|k| introduced.contains(&k));
                    if ended && known {
                        lines.push(format!("GONE: {}", label.expect("known")));
                        any_box = true;
                    }
                }
            }
        }
        if !any_box {
            return Ok((NO_MATCH.to_string(), false));
        }
        Ok((lines.join("\n"), any_corrupt))
    }
}

impl Backend for OracleBackend {
    fn complete(&self, request: &BackendRequest) -> Result<String, BackendError> {
        let (text, corrupt) = self.answer(request)?;
        self.responses.fetch_add(1, Ordering::SeqCst);
        if corrupt {
            self.corrupted.fetch_add(1, Ordering::SeqCst);
        }
        Ok(text)
    }
}
