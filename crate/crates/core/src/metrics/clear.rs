use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{check_pair, frame_pairs, iou_matrix, FramePair, MetricsError};
use crate::assignment::max_weight_assignment;
use crate::track::{TrackId, TrackSet};

/// Bonus that makes continuing last frame's pairing win over any IoU gain.
const CARRYOVER_BONUS: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClearScores {
    pub mota: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub idsw: usize,
}

pub fn clear_scores(pred: &TrackSet, gt: &TrackSet, iou_threshold: f64) -> Result<ClearScores, MetricsError> {
    check_pair(pred, gt)?;
    Ok(clear_over_frames(&frame_pairs(pred, gt), iou_threshold))
}

pub(crate) fn clear_over_frames(frames: &[FramePair], iou_threshold: f64) -> ClearScores {
    let (mut tp, mut fp, mut fn_, mut idsw) = (0usize, 0usize, 0usize, 0usize);
    let mut last_match: HashMap<TrackId, TrackId> = HashMap::new();
    let mut prev_step: HashMap<TrackId, TrackId> = HashMap::new();

    for (gts, preds) in frames {
        if gts.is_empty() || preds.is_empty() {
            fp += preds.len();
            fn_ += gts.len();
            // The previous pairing survives frames with nothing to match.
            continue;
        }
        let mut score = iou_matrix(gts, preds);
        for (i, row) in score.iter_mut().enumerate() {
            for (j, s) in row.iter_mut().enumerate() {
                if *s < iou_threshold - f64::EPSILON {
                    *s = 0.0;
                } else if prev_step.get(&gts[i].0) == Some(&preds[j].0) {
                    *s += CARRYOVER_BONUS;
                }
            }
        }
        let mut step = HashMap::new();
        let mut matched = 0usize;
        for (i, j) in max_weight_assignment(&score) {
            if score[i][j] <= f64::EPSILON {
                continue;
            }
            matched += 1;
            let (g, p) = (gts[i].0, preds[j].0);
            if last_match.get(&g).is_some_and(|prev| *prev != p) {
                idsw += 1;
            }
            last_match.insert(g, p);
            step.insert(g, p);
        }
        prev_step = step;
        tp += matched;
        fn_ += gts.len() - matched;
        fp += preds.len() - matched;
    }
    let gt_dets = tp + fn_;
    let mota = (tp as f64 - fp as f64 - idsw as f64) / gt_dets.max(1) as f64;
    ClearScores { mota, tp, fp, fn_, idsw }
}
