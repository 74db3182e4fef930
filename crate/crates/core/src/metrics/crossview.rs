//! Cross-view referring metrics.
//!
//! All views are concatenated into one long sequence in which ground-truth
//! tracks carry their global (cross-view) identity. A predicted id can then
//! only earn identity credit for a person if it is used for that person in
//! every view, and an id change between views counts as a switch. With a
//! single view both scores reduce exactly to IDF1 and MOTA.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::clear::clear_over_frames;
use super::identity::identity_over_frames;
use super::{check_pair, frame_pairs, FramePair, MetricsError, MATCH_THRESHOLD};
use crate::track::{TrackId, TrackSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossViewScores {
    pub cvr_idf1: f64,
    pub cvrma: f64,
}

/// Maps `(view index, ground-truth track id)` to a global identity.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CrossViewIdMap {
    map: BTreeMap<(usize, TrackId), TrackId>,
}

impl CrossViewIdMap {
    /// Ground-truth ids are already global identities.
    pub fn identity(gts: &[TrackSet]) -> Self {
        let map = gts
            .iter()
            .enumerate()
            .flat_map(|(v, g)| g.track_ids().map(move |id| ((v, id), id)))
            .collect();
        Self { map }
    }

    pub fn insert(&mut self, view: usize, gt_id: TrackId, global: TrackId) {
        self.map.insert((view, gt_id), global);
    }

    pub fn get(&self, view: usize, gt_id: TrackId) -> Option<TrackId> {
        self.map.get(&(view, gt_id)).copied()
    }

    fn validate(&self, gts: &[TrackSet]) -> Result<(), MetricsError> {
        for (v, gt) in gts.iter().enumerate() {
            let mut seen = BTreeSet::new();
            for id in gt.track_ids() {
                let global = self
                    .get(v, id)
                    .ok_or_else(|| MetricsError::InconsistentIdMap(format!("view {v} track {id} has no global id")))?;
                if !seen.insert(global) {
                    return Err(MetricsError::InconsistentIdMap(format!(
                        "view {v} maps two tracks to global id {global}"
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn crmot_scores(
    preds: &[TrackSet],
    gts: &[TrackSet],
    id_map: &CrossViewIdMap,
) -> Result<CrossViewScores, MetricsError> {
    if preds.len() != gts.len() || gts.is_empty() {
        return Err(MetricsError::ViewCountMismatch { preds: preds.len(), gts: gts.len() });
    }
    id_map.validate(gts)?;
    let mut frames: Vec<FramePair> = Vec::new();
    for (v, (pred, gt)) in preds.iter().zip(gts).enumerate() {
        check_pair(pred, gt)?;
        for (g, p) in frame_pairs(pred, gt) {
            let g = g.into_iter().map(|(id, b)| (id_map.get(v, id).unwrap_or(id), b)).collect();
            frames.push((g, p));
        }
    }
    let clear = clear_over_frames(&frames, MATCH_THRESHOLD);
    let ident = identity_over_frames(&frames, MATCH_THRESHOLD);
    Ok(CrossViewScores { cvr_idf1: ident.idf1, cvrma: clear.mota })
}
