//! Tracking and caption metrics.
//!
//! Tracking metrics follow the usual evaluation-kit conventions: IoU
//! similarity, CLEAR matching with carry-over preference, global identity
//! matching for IDF1 and the 19-threshold HOTA grid.

mod caption;
mod clear;
mod crossview;
mod hota;
mod identity;
mod report;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bbox::{iou, BBox};
use crate::track::{TrackId, TrackSet};

pub use caption::{
    bleu4, caption_scores, meteor_lite, rouge_l, tokenize, CaptionPair, CaptionScores, CiderCorpus, BLEU_EPSILON,
    CIDER_SIGMA, METEOR_ALPHA, ROUGE_BETA,
};
pub use clear::{clear_scores, ClearScores};
pub use crossview::{crmot_scores, CrossViewIdMap, CrossViewScores};
pub use hota::{hota, hota_alphas, HotaScores};
pub use identity::{idf1, identity_scores, IdentityScores};
pub use report::{MetricReport, SequenceScores};

/// Default IoU threshold for CLEAR and identity matching.
pub const MATCH_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("prediction ({pred}, {pred_frames} frames) does not match ground truth ({gt}, {gt_frames} frames)")]
    SequenceMismatch { pred: String, pred_frames: u32, gt: String, gt_frames: u32 },
    #[error("got {preds} predicted views for {gts} ground-truth views")]
    ViewCountMismatch { preds: usize, gts: usize },
    #[error("inconsistent cross-view id map: {0}")]
    InconsistentIdMap(String),
    #[error("caption corpus has no references")]
    EmptyCorpus,
}

/// Headline tracking scores for one sequence. Fractions, not percentages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingScores {
    pub hota: f64,
    pub det_a: f64,
    pub ass_a: f64,
    pub mota: f64,
    pub idf1: f64,
    pub idsw: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Runs HOTA, CLEAR and IDF1 on one prediction/ground-truth pair.
pub fn evaluate_tracking(pred: &TrackSet, gt: &TrackSet) -> Result<TrackingScores, MetricsError> {
    let h = hota(pred, gt)?;
    let c = clear_scores(pred, gt, MATCH_THRESHOLD)?;
    let i = identity_scores(pred, gt, MATCH_THRESHOLD)?;
    Ok(TrackingScores {
        hota: h.hota,
        det_a: h.det_a,
        ass_a: h.ass_a,
        mota: c.mota,
        idf1: i.idf1,
        idsw: c.idsw,
        fp: c.fp,
        fn_: c.fn_,
    })
}

/// One frame's ground-truth and predicted boxes.
pub(crate) type FramePair = (Vec<(TrackId, BBox)>, Vec<(TrackId, BBox)>);

pub(crate) fn check_pair(pred: &TrackSet, gt: &TrackSet) -> Result<(), MetricsError> {
    if pred.sequence_id != gt.sequence_id || pred.frame_count() != gt.frame_count() {
        return Err(MetricsError::SequenceMismatch {
            pred: pred.sequence_id.clone(),
            pred_frames: pred.frame_count(),
            gt: gt.sequence_id.clone(),
            gt_frames: gt.frame_count(),
        });
    }
    Ok(())
}

pub(crate) fn frame_pairs(pred: &TrackSet, gt: &TrackSet) -> Vec<FramePair> {
    gt.by_frame().into_iter().zip(pred.by_frame()).collect()
}

pub(crate) fn iou_matrix(gts: &[(TrackId, BBox)], preds: &[(TrackId, BBox)]) -> Vec<Vec<f64>> {
    gts.iter().map(|(_, g)| preds.iter().map(|(_, p)| iou(g, p)).collect()).collect()
}
