//! Format and IoU rewards for box-producing answers, plus group-relative
//! advantages.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bbox::{iou, BBox};
use crate::grammar::{classify_format, parse_response, FormatClass};

/// Guard added to the group standard deviation.
pub const ADVANTAGE_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RewardError {
    #[error("group needs at least 2 rewards, got {0}")]
    GroupTooSmall(usize),
    #[error("reward weights must be non-negative and ordered well_formed >= alt_format >= untagged >= none")]
    BadWeights,
    #[error("non-finite reward in group")]
    NonFinite,
}

/// Which training stage's IoU mapping to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Stage {
    /// IoU mapped into `[0.5, 1]` so the format term dominates.
    #[default]
    Stage1,
    /// Raw IoU.
    Stage4,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetWeights {
    pub well_formed: f64,
    pub alt_format: f64,
    pub untagged: f64,
    pub none: f64,
}

impl Default for SetWeights {
    fn default() -> Self {
        Self { well_formed: 2.0, alt_format: 0.6, untagged: 0.4, none: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct RewardConfig {
    pub stage: Stage,
    pub set_weights: SetWeights,
}

impl RewardConfig {
    pub fn new(stage: Stage, set_weights: SetWeights) -> Result<Self, RewardError> {
        let w = set_weights;
        let ordered = w.well_formed >= w.alt_format && w.alt_format >= w.untagged && w.untagged >= w.none;
        if !ordered || w.none < 0.0 {
            return Err(RewardError::BadWeights);
        }
        Ok(Self { stage, set_weights })
    }

    pub fn stage(stage: Stage) -> Self {
        Self { stage, ..Default::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardOutcome {
    pub format_reward: f64,
    pub iou: f64,
    pub total: f64,
    pub format_class: FormatClass,
}

pub fn format_reward(class: FormatClass, cfg: &RewardConfig) -> f64 {
    let w = &cfg.set_weights;
    match class {
        FormatClass::WellFormed => w.well_formed,
        FormatClass::AltFormat => w.alt_format,
        FormatClass::UntaggedNumbers => w.untagged,
        FormatClass::NoBox => w.none,
    }
}

/// IoU factor multiplied onto the format reward.
pub fn iou_term(iou: f64, stage: Stage) -> f64 {
    match stage {
        Stage::Stage1 => iou / 2.0 + 0.5,
        Stage::Stage4 => iou,
    }
}

/// Reward from an already-known class and IoU.
pub fn reward_from_parts(class: FormatClass, iou: f64, cfg: &RewardConfig) -> RewardOutcome {
    let r = format_reward(class, cfg);
    RewardOutcome { format_reward: r, iou, total: r * iou_term(iou, cfg.stage), format_class: class }
}

/// Scores a raw answer against one ground-truth box.
///
/// IoU is taken against the first box found in the answer (0 if none).
pub fn combined_reward(text: &str, gt: &BBox, cfg: &RewardConfig) -> RewardOutcome {
    let class = classify_format(text);
    let overlap = parse_response(text).first_bbox().map_or(0.0, |b| iou(&b, gt));
    reward_from_parts(class, overlap, cfg)
}

/// `(r_i - mean) / (std + eps)` using the population standard deviation.
pub fn group_advantages(rewards: &[f64]) -> Result<Vec<f64>, RewardError> {
    if rewards.len() < 2 {
        return Err(RewardError::GroupTooSmall(rewards.len()));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(RewardError::NonFinite);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let denom = var.sqrt() + ADVANTAGE_EPSILON;
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::render_bbox;
    use proptest::prelude::*;

    #[test]
    fn set_weights() {
        let cfg = RewardConfig::default();
        assert_eq!(format_reward(FormatClass::WellFormed, &cfg), 2.0);
        assert_eq!(format_reward(FormatClass::AltFormat, &cfg), 0.6);
        assert_eq!(format_reward(FormatClass::UntaggedNumbers, &cfg), 0.4);
        assert_eq!(format_reward(FormatClass::NoBox, &cfg), 0.0);
    }

    #[test]
    fn combined_examples() {
        let gt = BBox::new(0.1, 0.2, 0.3, 0.4).unwrap();
        let far = BBox::new(0.6, 0.7, 0.2, 0.2).unwrap();
        let s1 = RewardConfig::stage(Stage::Stage1);
        let s4 = RewardConfig::stage(Stage::Stage4);
        assert!((combined_reward(&render_bbox(&gt), &gt, &s1).total - 2.0).abs() < 1e-12);
        assert!((combined_reward(&render_bbox(&far), &gt, &s1).total - 1.0).abs() < 1e-12);
        assert_eq!(combined_reward("left side", &gt, &s1).total, 0.0);
        assert_eq!(combined_reward(&render_bbox(&far), &gt, &s4).total, 0.0);
    }

    #[test]
    fn untagged_answer_still_gets_iou() {
        let gt = BBox::new(0.1, 0.2, 0.3, 0.4).unwrap();
        let out = combined_reward("(0.1, 0.2, 0.3, 0.4)", &gt, &RewardConfig::default());
        assert_eq!(out.format_class, FormatClass::UntaggedNumbers);
        assert!((out.iou - 1.0).abs() < 1e-12);
        assert!((out.total - 0.4).abs() < 1e-12);
    }

    #[test]
    fn advantages_examples() {
        assert_eq!(group_advantages(&[1.0; 4]).unwrap(), vec![0.0; 4]);
        let a = group_advantages(&[0.0, 2.0]).unwrap();
        assert!((a[0] + 1.0).abs() < 1e-6 && (a[1] - 1.0).abs() < 1e-6);
        let a = group_advantages(&[2.0, 0.6, 0.4, 0.0]).unwrap();
        assert!(a.iter().sum::<f64>().abs() < 1e-9);
        assert_eq!(group_advantages(&[1.0]), Err(RewardError::GroupTooSmall(1)));
    }

    #[test]
    fn weights_must_be_monotone() {
        let bad = SetWeights { well_formed: 0.5, ..Default::default() };
        assert_eq!(RewardConfig::new(Stage::Stage1, bad), Err(RewardError::BadWeights));
        assert!(RewardConfig::new(Stage::Stage4, SetWeights::default()).is_ok());
    }

    fn any_class() -> impl Strategy<Value = FormatClass> {
        prop_oneof![
            Just(FormatClass::WellFormed),
            Just(FormatClass::AltFormat),
            Just(FormatClass::UntaggedNumbers),
            Just(FormatClass::NoBox)
        ]
    }

    proptest! {
        #[test]
        fn stage_ranges(class in any_class(), iou in 0.0..=1.0f64) {
            let s1 = reward_from_parts(class, iou, &RewardConfig::stage(Stage::Stage1));
            let s4 = reward_from_parts(class, iou, &RewardConfig::stage(Stage::Stage4));
            let r = s1.format_reward;
            prop_assert!(s1.total >= 0.5 * r - 1e-12 && s1.total <= r + 1e-12);
            prop_assert!(s4.total >= 0.0 && s4.total <= r + 1e-12);
        }

        #[test]
        fn stage1_monotone(class in any_class(), a in 0.0..=1.0f64, b in 0.0..=1.0f64) {
            let cfg = RewardConfig::stage(Stage::Stage1);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(reward_from_parts(class, lo, &cfg).total <= reward_from_parts(class, hi, &cfg).total);
        }

        #[test]
        fn advantages_center(rs in proptest::collection::vec(0.0..2.0f64, 2..32)) {
            let a = group_advantages(&rs).unwrap();
            prop_assert_eq!(a.len(), rs.len());
            prop_assert!(a.iter().sum::<f64>().abs() < 1e-9 * rs.len() as f64);
        }
    }
}
