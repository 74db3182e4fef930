use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{check_pair, frame_pairs, iou_matrix, FramePair, MetricsError};
use crate::assignment::max_weight_assignment;
use crate::track::{TrackId, TrackSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HotaScores {
    pub hota: f64,
    pub det_a: f64,
    pub ass_a: f64,
    pub loc_a: f64,
}

/// Localization thresholds 0.05, 0.10, ..., 0.95.
pub fn hota_alphas() -> Vec<f64> {
    (1..=19).map(|k| k as f64 * 0.05).collect()
}

pub fn hota(pred: &TrackSet, gt: &TrackSet) -> Result<HotaScores, MetricsError> {
    check_pair(pred, gt)?;
    Ok(hota_over_frames(&frame_pairs(pred, gt)))
}

pub(crate) fn hota_over_frames(frames: &[FramePair]) -> HotaScores {
    let alphas = hota_alphas();
    let mut gt_index: BTreeMap<TrackId, usize> = BTreeMap::new();
    let mut pred_index: BTreeMap<TrackId, usize> = BTreeMap::new();
    for (gts, preds) in frames {
        for (id, _) in gts {
            let n = gt_index.len();
            gt_index.entry(*id).or_insert(n);
        }
        for (id, _) in preds {
            let n = pred_index.len();
            pred_index.entry(*id).or_insert(n);
        }
    }
    let (ng, np) = (gt_index.len(), pred_index.len());
    let gt_dets: usize = frames.iter().map(|(g, _)| g.len()).sum();
    let pred_dets: usize = frames.iter().map(|(_, p)| p.len()).sum();
    if gt_dets == 0 || pred_dets == 0 {
        return HotaScores { hota: 0.0, det_a: 0.0, ass_a: 0.0, loc_a: 1.0 };
    }

    // Soft identity alignment used to weight per-frame matching.
    let mut potential = vec![vec![0.0f64; np]; ng];
    let mut gt_count = vec![0.0f64; ng];
    let mut pred_count = vec![0.0f64; np];
    let sims: Vec<Vec<Vec<f64>>> = frames.iter().map(|(g, p)| iou_matrix(g, p)).collect();
    for ((gts, preds), sim) in frames.iter().zip(&sims) {
        let row_sum: Vec<f64> = sim.iter().map(|r| r.iter().sum()).collect();
        let col_sum: Vec<f64> = (0..preds.len()).map(|j| sim.iter().map(|r| r[j]).sum()).collect();
        for (i, row) in sim.iter().enumerate() {
            for (j, s) in row.iter().enumerate() {
                let denom = row_sum[i] + col_sum[j] - s;
                if denom > f64::EPSILON {
                    potential[gt_index[&gts[i].0]][pred_index[&preds[j].0]] += s / denom;
                }
            }
        }
        for (id, _) in gts {
            gt_count[gt_index[id]] += 1.0;
        }
        for (id, _) in preds {
            pred_count[pred_index[id]] += 1.0;
        }
    }
    let alignment: Vec<Vec<f64>> = (0..ng)
        .map(|i| (0..np).map(|j| potential[i][j] / (gt_count[i] + pred_count[j] - potential[i][j])).collect())
        .collect();

    let na = alphas.len();
    let mut tp = vec![0usize; na];
    let mut fn_ = vec![0usize; na];
    let mut fp = vec![0usize; na];
    let mut loc = vec![0.0f64; na];
    let mut matches = vec![vec![vec![0.0f64; np]; ng]; na];

    for ((gts, preds), sim) in frames.iter().zip(&sims) {
        if gts.is_empty() || preds.is_empty() {
            for a in 0..na {
                fn_[a] += gts.len();
                fp[a] += preds.len();
            }
            continue;
        }
        let score: Vec<Vec<f64>> = sim
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let gi = gt_index[&gts[i].0];
                row.iter().enumerate().map(|(j, s)| alignment[gi][pred_index[&preds[j].0]] * s).collect()
            })
            .collect();
        let pairs = max_weight_assignment(&score);
        for (a, alpha) in alphas.iter().enumerate() {
            let mut n = 0usize;
            for &(i, j) in &pairs {
                if sim[i][j] >= alpha - f64::EPSILON {
                    n += 1;
                    loc[a] += sim[i][j];
                    matches[a][gt_index[&gts[i].0]][pred_index[&preds[j].0]] += 1.0;
                }
            }
            tp[a] += n;
            fn_[a] += gts.len() - n;
            fp[a] += preds.len() - n;
        }
    }

    let (mut hota_sum, mut det_sum, mut ass_sum, mut loc_sum) = (0.0, 0.0, 0.0, 0.0);
    for a in 0..na {
        let m = &matches[a];
        let mut ass_num = 0.0;
        for i in 0..ng {
            for j in 0..np {
                if m[i][j] > 0.0 {
                    let ass = m[i][j] / (gt_count[i] + pred_count[j] - m[i][j]).max(1.0);
                    ass_num += m[i][j] * ass;
                }
            }
        }
        let ass_a = ass_num / (tp[a].max(1) as f64);
        let det_a = tp[a] as f64 / ((tp[a] + fn_[a] + fp[a]).max(1) as f64);
        hota_sum += (det_a * ass_a).sqrt();
        det_sum += det_a;
        ass_sum += ass_a;
        loc_sum += loc[a].max(1e-10) / (tp[a] as f64).max(1e-10);
    }
    let n = na as f64;
    HotaScores { hota: hota_sum / n, det_a: det_sum / n, ass_a: ass_sum / n, loc_a: loc_sum / n }
}
