mod common;

use common::{random_instance, reference_scores, relabel_with, size};
use proptest::prelude::*;
use vltrack::bbox::{normalize_bbox, BBox, ImageSize};
use vltrack::metrics::{
    bleu4, caption_scores, clear_scores, crmot_scores, evaluate_tracking, hota, idf1, meteor_lite, rouge_l, tokenize,
    CaptionPair, CrossViewIdMap, TrackingScores, MATCH_THRESHOLD,
};
use vltrack::track::{TrackId, TrackSet};

fn close(a: &TrackingScores, b: &TrackingScores) -> bool {
    let f = |x: f64, y: f64| (x - y).abs() <= 1e-9;
    f(a.hota, b.hota)
        && f(a.det_a, b.det_a)
        && f(a.ass_a, b.ass_a)
        && f(a.mota, b.mota)
        && f(a.idf1, b.idf1)
        && (a.idsw, a.fp, a.fn_) == (b.idsw, b.fp, b.fn_)
}

/// Re-expresses a track set in pixels of an image `k` times larger.
fn rescale(ts: &TrackSet, k: u32) -> TrackSet {
    let from = ts.image_size();
    let to = ImageSize::new(from.width * k, from.height * k).unwrap();
    let mut out = TrackSet::new("s", ts.frame_count(), to);
    for d in ts.detections() {
        let (l, t, w, h) = d.bbox.to_pixels(from);
        let k = k as f64;
        out.insert(d.track_id.unwrap(), d.frame_index, normalize_bbox((l * k, t * k, w * k, h * k), to).unwrap()).unwrap();
    }
    out
}

fn track(frames: u32, boxes: &[(TrackId, u32, f64)]) -> TrackSet {
    let mut ts = TrackSet::new("s", frames, size());
    for &(id, f, x) in boxes {
        ts.insert(id, f, BBox::new(x, 0.2, 0.1, 0.3).unwrap()).unwrap();
    }
    ts
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn agrees_with_brute_force(seed in any::<u64>()) {
        let (pred, gt) = random_instance(seed);
        let got = evaluate_tracking(&pred, &gt).unwrap();
        let want = reference_scores(&pred, &gt);
        prop_assert!((got.hota - want.hota).abs() <= 1e-9, "hota {} vs {}", got.hota, want.hota);
        prop_assert!((got.det_a - want.det_a).abs() <= 1e-9);
        prop_assert!((got.ass_a - want.ass_a).abs() <= 1e-9);
        prop_assert!((got.mota - want.mota).abs() <= 1e-9, "mota {} vs {}", got.mota, want.mota);
        prop_assert!((got.idf1 - want.idf1).abs() <= 1e-9, "idf1 {} vs {}", got.idf1, want.idf1);
        prop_assert_eq!(got.idsw, want.idsw);
    }

    #[test]
    fn invariant_under_relabeling(seed in any::<u64>(), offset in 1..1000u32, reverse in any::<bool>()) {
        let (pred, gt) = random_instance(seed);
        let base = evaluate_tracking(&pred, &gt).unwrap();
        let moved = evaluate_tracking(&relabel_with(&pred, offset, reverse), &gt).unwrap();
        prop_assert!(close(&base, &moved), "{base:?} vs {moved:?}");
        let both = evaluate_tracking(&relabel_with(&pred, offset, reverse), &relabel_with(&gt, offset, !reverse)).unwrap();
        prop_assert!(close(&base, &both), "{base:?} vs {both:?}");
    }

    #[test]
    fn invariant_under_scaling(seed in any::<u64>(), k in 2..6u32) {
        let (pred, gt) = random_instance(seed);
        let base = evaluate_tracking(&pred, &gt).unwrap();
        let scaled = evaluate_tracking(&rescale(&pred, k), &rescale(&gt, k)).unwrap();
        prop_assert!(close(&base, &scaled), "{base:?} vs {scaled:?}");
    }

    #[test]
    fn scores_are_in_range(seed in any::<u64>()) {
        let (pred, gt) = random_instance(seed);
        let s = evaluate_tracking(&pred, &gt).unwrap();
        for v in [s.hota, s.det_a, s.ass_a, s.idf1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(s.mota <= 1.0);
        let h = hota(&pred, &gt).unwrap();
        prop_assert!((0.0..=1.0).contains(&h.loc_a));
    }

    #[test]
    fn perfect_prediction_scores_one(seed in any::<u64>()) {
        let (_, gt) = random_instance(seed);
        prop_assume!(!gt.is_empty());
        let s = evaluate_tracking(&gt, &gt).unwrap();
        prop_assert_eq!((s.hota, s.det_a, s.ass_a, s.mota, s.idf1), (1.0, 1.0, 1.0, 1.0, 1.0));
        prop_assert_eq!((s.idsw, s.fp, s.fn_), (0, 0, 0));
    }

    #[test]
    fn caption_metrics_bounded(
        cand in proptest::collection::vec("[a-e]{1,3}", 1..12),
        refs in proptest::collection::vec(proptest::collection::vec("[a-e]{1,3}", 1..12), 1..4),
    ) {
        let pairs = vec![CaptionPair { candidate: cand.join(" "), references: refs.iter().map(|r| r.join(" ")).collect() }];
        let (per, _) = caption_scores(&pairs).unwrap();
        let s = per[0];
        for v in [s.bleu4, s.rouge_l, s.meteor] {
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v), "{s:?}");
        }
        prop_assert!((0.0..=10.0 + 1e-9).contains(&s.cider_d), "{s:?}");
    }

    #[test]
    fn disjoint_vocabulary_scores_zero(
        cand in proptest::collection::vec("[a-m]{2,4}", 1..10),
        refs in proptest::collection::vec(proptest::collection::vec("[n-z]{2,4}", 1..10), 1..3),
    ) {
        let pairs = vec![CaptionPair { candidate: cand.join(" "), references: refs.iter().map(|r| r.join(" ")).collect() }];
        let (per, _) = caption_scores(&pairs).unwrap();
        let s = per[0];
        prop_assert_eq!((s.bleu4, s.rouge_l, s.meteor, s.cider_d), (0.0, 0.0, 0.0, 0.0));
    }
}

#[test]
fn single_swap_counts_once() {
    let gt = track(4, &[(1, 0, 0.1), (1, 1, 0.1), (1, 2, 0.1), (1, 3, 0.1)]);
    let pred = track(4, &[(1, 0, 0.1), (1, 1, 0.1), (2, 2, 0.1), (2, 3, 0.1)]);
    let c = clear_scores(&pred, &gt, MATCH_THRESHOLD).unwrap();
    assert_eq!(c.idsw, 1);
    assert!((c.mota - 0.75).abs() < 1e-12);
    assert!((idf1(&pred, &gt, MATCH_THRESHOLD).unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn merged_identities_keep_detection_but_lose_association() {
    let gt = track(4, &[(1, 0, 0.1), (1, 1, 0.1), (2, 0, 0.6), (2, 1, 0.6), (1, 2, 0.1), (2, 2, 0.6)]);
    // Both objects predicted under one id in alternating frames.
    let pred = track(4, &[(7, 0, 0.1), (8, 0, 0.6), (8, 1, 0.1), (7, 1, 0.6), (7, 2, 0.1), (8, 2, 0.6)]);
    let h = hota(&pred, &gt).unwrap();
    assert!((h.det_a - 1.0).abs() < 1e-12);
    assert!(h.ass_a < 1.0);
    assert!(h.hota < 1.0);
}

#[test]
fn false_positive_flood_drives_mota_negative() {
    let gt = track(3, &[(1, 0, 0.1), (1, 1, 0.1), (1, 2, 0.1)]);
    let mut boxes = vec![(1, 0, 0.1), (1, 1, 0.1), (1, 2, 0.1)];
    for f in 0..3 {
        for k in 0..4 {
            boxes.push((10 + k, f, 0.3 + 0.15 * k as f64));
        }
    }
    let pred = track(3, &boxes);
    let c = clear_scores(&pred, &gt, MATCH_THRESHOLD).unwrap();
    assert_eq!(c.fp, 12);
    assert!((c.mota - (1.0 - 12.0 / 3.0)).abs() < 1e-12);
}

#[test]
fn empty_prediction_is_all_misses() {
    let gt = track(2, &[(1, 0, 0.1), (1, 1, 0.1)]);
    let s = evaluate_tracking(&gt.empty_like(), &gt).unwrap();
    assert_eq!((s.fn_, s.fp, s.idsw), (2, 0, 0));
    assert_eq!((s.hota, s.mota, s.idf1), (0.0, 0.0, 0.0));
}

#[test]
fn single_view_crossview_matches_single_view_metrics() {
    for seed in 0..50 {
        let (pred, gt) = random_instance(seed);
        let gts = vec![gt.clone()];
        let s = crmot_scores(&[pred.clone()], &gts, &CrossViewIdMap::identity(&gts)).unwrap();
        let c = clear_scores(&pred, &gt, MATCH_THRESHOLD).unwrap();
        assert!((s.cvr_idf1 - idf1(&pred, &gt, MATCH_THRESHOLD).unwrap()).abs() < 1e-12, "seed {seed}");
        assert!((s.cvrma - c.mota).abs() < 1e-12, "seed {seed}");
    }
}

#[test]
fn inconsistent_view_ids_are_penalized() {
    let a = track(3, &[(1, 0, 0.1), (1, 1, 0.1), (1, 2, 0.1)]);
    let b = track(3, &[(1, 0, 0.5), (1, 1, 0.5), (1, 2, 0.5)]);
    let gts = vec![a.clone(), b.clone()];
    let map = CrossViewIdMap::identity(&gts);
    let same = crmot_scores(&gts, &gts, &map).unwrap();
    assert_eq!(same.cvr_idf1, 1.0);
    let split = crmot_scores(&[a, relabel_with(&b, 5, false)], &gts, &map).unwrap();
    assert!((split.cvr_idf1 - 0.5).abs() < 1e-12);
}

#[test]
fn caption_anchors() {
    let t = tokenize("a man walks a dog");
    assert!((bleu4(&t, &[t.clone()]) - 1.0).abs() < 1e-12);
    assert!((rouge_l(&t, &[t.clone()]) - 1.0).abs() < 1e-12);
    let m = t.len() as f64;
    assert!((meteor_lite(&t, &[t.clone()]) - (1.0 - 0.5 * (1.0 / m).powi(3))).abs() < 1e-12);
}

#[test]
fn mismatched_inputs_are_errors() {
    let gt = track(2, &[(1, 0, 0.1)]);
    assert!(evaluate_tracking(&track(3, &[]), &gt).is_err());
    assert!(crmot_scores(&[], &[], &CrossViewIdMap::default()).is_err());
    assert!(caption_scores(&[]).is_err());
}
