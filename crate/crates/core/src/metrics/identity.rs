use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{check_pair, frame_pairs, iou_matrix, FramePair, MetricsError};
use crate::assignment::max_weight_assignment;
use crate::track::{TrackId, TrackSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityScores {
    pub idf1: f64,
    pub idtp: usize,
    pub idfp: usize,
    pub idfn: usize,
}

pub fn idf1(pred: &TrackSet, gt: &TrackSet, iou_threshold: f64) -> Result<f64, MetricsError> {
    identity_scores(pred, gt, iou_threshold).map(|s| s.idf1)
}

pub fn identity_scores(pred: &TrackSet, gt: &TrackSet, iou_threshold: f64) -> Result<IdentityScores, MetricsError> {
    check_pair(pred, gt)?;
    Ok(identity_over_frames(&frame_pairs(pred, gt), iou_threshold))
}

/// Global one-to-one identity matching that maximizes co-occurring matches.
pub(crate) fn identity_over_frames(frames: &[FramePair], iou_threshold: f64) -> IdentityScores {
    let mut gt_index: BTreeMap<TrackId, usize> = BTreeMap::new();
    let mut pred_index: BTreeMap<TrackId, usize> = BTreeMap::new();
    let (mut gt_dets, mut pred_dets) = (0usize, 0usize);
    for (gts, preds) in frames {
        gt_dets += gts.len();
        pred_dets += preds.len();
        for (id, _) in gts {
            let n = gt_index.len();
            gt_index.entry(*id).or_insert(n);
        }
        for (id, _) in preds {
            let n = pred_index.len();
            pred_index.entry(*id).or_insert(n);
        }
    }

    let mut co = vec![vec![0.0f64; pred_index.len()]; gt_index.len()];
    for (gts, preds) in frames {
        let sim = iou_matrix(gts, preds);
        for (i, row) in sim.iter().enumerate() {
            for (j, s) in row.iter().enumerate() {
                if *s >= iou_threshold {
                    co[gt_index[&gts[i].0]][pred_index[&preds[j].0]] += 1.0;
                }
            }
        }
    }
    let idtp: usize = max_weight_assignment(&co).into_iter().map(|(i, j)| co[i][j] as usize).sum();
    let idfn = gt_dets - idtp;
    let idfp = pred_dets - idtp;
    let denom = (idtp as f64 + 0.5 * idfp as f64 + 0.5 * idfn as f64).max(1.0);
    IdentityScores { idf1: idtp as f64 / denom, idtp, idfp, idfn }
}
