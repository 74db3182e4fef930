use proptest::prelude::*;
use vltrack::bbox::BBox;
use vltrack::grammar::{render_bbox, render_id_line, FormatClass};
use vltrack::reward::{
    combined_reward, format_reward, group_advantages, reward_from_parts, RewardConfig, SetWeights, Stage,
};

fn class() -> impl Strategy<Value = FormatClass> {
    prop_oneof![
        Just(FormatClass::NoBox),
        Just(FormatClass::UntaggedNumbers),
        Just(FormatClass::AltFormat),
        Just(FormatClass::WellFormed),
    ]
}

fn bbox() -> impl Strategy<Value = BBox> {
    (0.0..0.7f64, 0.0..0.7f64, 0.01..0.3f64, 0.01..0.3f64).prop_map(|(x, y, w, h)| BBox::new(x, y, w, h).unwrap())
}

proptest! {
    #[test]
    fn stage1_monotone_in_iou(c in class(), a in 0.0..=1.0f64, b in 0.0..=1.0f64) {
        let cfg = RewardConfig::stage(Stage::Stage1);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(reward_from_parts(c, lo, &cfg).total <= reward_from_parts(c, hi, &cfg).total);
    }

    #[test]
    fn totals_within_stage_ranges(c in class(), iou in 0.0..=1.0f64) {
        for stage in [Stage::Stage1, Stage::Stage4] {
            let cfg = RewardConfig::stage(stage);
            let r = format_reward(c, &cfg);
            let out = reward_from_parts(c, iou, &cfg);
            let floor = if stage == Stage::Stage1 { 0.5 * r } else { 0.0 };
            prop_assert!(out.total >= floor - 1e-12 && out.total <= r + 1e-12);
        }
    }

    #[test]
    fn total_is_product_of_parts(gt in bbox(), pred in bbox(), stage in prop_oneof![Just(Stage::Stage1), Just(Stage::Stage4)]) {
        let cfg = RewardConfig::stage(stage);
        let out = combined_reward(&render_id_line(1, &pred), &gt, &cfg);
        let term = match stage { Stage::Stage1 => out.iou / 2.0 + 0.5, Stage::Stage4 => out.iou };
        prop_assert!((out.total - out.format_reward * term).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&out.iou));
    }

    #[test]
    fn canonical_gt_scores_full_weight(x in 0..700_000u32, y in 0..700_000u32, w in 1..300_000u32, h in 1..300_000u32) {
        // On the six-decimal grid the rendering is exact.
        let gt = BBox::new(x as f64 / 1e6, y as f64 / 1e6, w as f64 / 1e6, h as f64 / 1e6).unwrap();
        for stage in [Stage::Stage1, Stage::Stage4] {
            let out = combined_reward(&render_bbox(&gt), &gt, &RewardConfig::stage(stage));
            prop_assert_eq!(out.format_class, FormatClass::WellFormed);
            prop_assert!((out.total - 2.0).abs() < 1e-12, "{out:?}");
        }
    }

    #[test]
    fn off_grid_gt_loses_only_rounding(gt in bbox()) {
        // Each edge moves by at most 1e-6 after rounding x and w separately.
        let loss = 2.0 * (2e-6 / gt.w() + 2e-6 / gt.h());
        let out = combined_reward(&render_bbox(&gt), &gt, &RewardConfig::stage(Stage::Stage4));
        prop_assert!(out.total >= 2.0 * (1.0 - loss) && out.total <= 2.0, "{out:?}");
    }

    #[test]
    fn advantages_sum_to_zero(rs in proptest::collection::vec(-10.0..10.0f64, 2..32)) {
        let adv = group_advantages(&rs).unwrap();
        prop_assert_eq!(adv.len(), rs.len());
        prop_assert!(adv.iter().sum::<f64>().abs() <= 1e-9 * rs.len() as f64);
        // order preserved
        for i in 0..rs.len() {
            for j in 0..rs.len() {
                if rs[i] < rs[j] {
                    prop_assert!(adv[i] <= adv[j]);
                }
            }
        }
    }
}

#[test]
fn format_weights() {
    let cfg = RewardConfig::default();
    assert_eq!(format_reward(FormatClass::WellFormed, &cfg), 2.0);
    assert_eq!(format_reward(FormatClass::AltFormat, &cfg), 0.6);
    assert_eq!(format_reward(FormatClass::UntaggedNumbers, &cfg), 0.4);
    assert_eq!(format_reward(FormatClass::NoBox, &cfg), 0.0);
}

#[test]
fn combined_examples() {
    let gt = BBox::new(0.2, 0.2, 0.3, 0.3).unwrap();
    let far = BBox::new(0.7, 0.7, 0.1, 0.1).unwrap();
    let s1 = RewardConfig::stage(Stage::Stage1);
    let s4 = RewardConfig::stage(Stage::Stage4);
    assert!((combined_reward(&render_bbox(&gt), &gt, &s1).total - 2.0).abs() < 1e-5);
    assert_eq!(combined_reward(&render_bbox(&far), &gt, &s1).total, 1.0);
    assert_eq!(combined_reward("no idea where it is", &gt, &s1).total, 0.0);
    assert_eq!(combined_reward(&render_bbox(&far), &gt, &s4).total, 0.0);
}

#[test]
fn first_box_is_scored() {
    let gt = BBox::new(0.2, 0.2, 0.3, 0.3).unwrap();
    let far = BBox::new(0.7, 0.7, 0.1, 0.1).unwrap();
    let text = format!("{}\n{}", render_id_line(1, &far), render_id_line(2, &gt));
    assert_eq!(combined_reward(&text, &gt, &RewardConfig::stage(Stage::Stage4)).iou, 0.0);
}

#[test]
fn advantage_examples() {
    let a = group_advantages(&[0.0, 2.0]).unwrap();
    assert!((a[0] + 1.0).abs() < 1e-6 && (a[1] - 1.0).abs() < 1e-6);
    assert_eq!(group_advantages(&[1.0; 4]).unwrap(), vec![0.0; 4]);
    let b = group_advantages(&[2.0, 0.6, 0.4, 0.0]).unwrap();
    assert!(b.iter().sum::<f64>().abs() < 1e-9);
    assert!(group_advantages(&[1.0]).is_err());
    assert!(group_advantages(&[]).is_err());
    assert!(group_advantages(&[1.0, f64::NAN]).is_err());
}

#[test]
fn weights_must_be_ordered() {
    let bad = SetWeights { well_formed: 0.5, alt_format: 0.6, untagged: 0.4, none: 0.0 };
    assert!(RewardConfig::new(Stage::Stage1, bad).is_err());
    let negative = SetWeights { none: -0.1, ..SetWeights::default() };
    assert!(RewardConfig::new(Stage::Stage1, negative).is_err());
    assert!(RewardConfig::new(Stage::Stage4, SetWeights::default()).is_ok());
}
