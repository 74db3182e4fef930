//! Shared test helpers: a brute-force metric oracle and instance generators.
//!
//! The oracle enumerates every partial matching instead of solving an
//! assignment problem, and recomputes IoU on its own.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vltrack::bbox::{BBox, ImageSize};
use vltrack::track::{TrackId, TrackSet};

pub fn size() -> ImageSize {
    ImageSize::new(640, 480).unwrap()
}

fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = ((a.x() + a.w()).min(b.x() + b.w()) - a.x().max(b.x())).max(0.0);
    let iy = ((a.y() + a.h()).min(b.y() + b.h()) - a.y().max(b.y())).max(0.0);
    let inter = ix * iy;
    let union = a.w() * a.h() + b.w() * b.h() - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Every partial one-to-one matching of rows to columns using only allowed
/// cells; returns the one with the largest total weight.
fn best_matching(weight: &[Vec<Option<f64>>]) -> Vec<(usize, usize)> {
    fn go(
        row: usize,
        weight: &[Vec<Option<f64>>],
        used: &mut Vec<bool>,
        cur: &mut Vec<(usize, usize)>,
        total: f64,
        best: &mut (f64, Vec<(usize, usize)>),
    ) {
        if row == weight.len() {
            if total > best.0 {
                *best = (total, cur.clone());
            }
            return;
        }
        go(row + 1, weight, used, cur, total, best);
        for (col, w) in weight[row].iter().enumerate() {
            if let (Some(w), false) = (w, used[col]) {
                used[col] = true;
                cur.push((row, col));
                go(row + 1, weight, used, cur, total + w, best);
                cur.pop();
                used[col] = false;
            }
        }
    }
    let cols = weight.first().map_or(0, Vec::len);
    let mut best = (f64::NEG_INFINITY, Vec::new());
    go(0, weight, &mut vec![false; cols], &mut Vec::new(), 0.0, &mut best);
    best.1
}

#[derive(Debug, Clone, Copy)]
pub struct Reference {
    pub hota: f64,
    pub det_a: f64,
    pub ass_a: f64,
    pub mota: f64,
    pub idf1: f64,
    pub idsw: usize,
}

type Frame = (Vec<(TrackId, BBox)>, Vec<(TrackId, BBox)>);

fn frames(pred: &TrackSet, gt: &TrackSet) -> Vec<Frame> {
    (0..gt.frame_count()).map(|f| (gt.frame_boxes(f), pred.frame_boxes(f))).collect()
}

fn clear(frames: &[Frame], thr: f64) -> (f64, usize) {
    let (mut tp, mut fp, mut fn_, mut idsw) = (0usize, 0usize, 0usize, 0usize);
    let mut last: HashMap<TrackId, TrackId> = HashMap::new();
    let mut prev: HashMap<TrackId, TrackId> = HashMap::new();
    for (g, p) in frames {
        if g.is_empty() || p.is_empty() {
            fp += p.len();
            fn_ += g.len();
            continue;
        }
        let w: Vec<Vec<Option<f64>>> = g
            .iter()
            .map(|(gi, gb)| {
                p.iter()
                    .map(|(pi, pb)| {
                        let s = iou(gb, pb);
                        (s >= thr - f64::EPSILON).then(|| s + if prev.get(gi) == Some(pi) { 1000.0 } else { 0.0 })
                    })
                    .collect()
            })
            .collect();
        let m = best_matching(&w);
        prev.clear();
        for &(i, j) in &m {
            let (gi, pi) = (g[i].0, p[j].0);
            if last.get(&gi).is_some_and(|x| *x != pi) {
                idsw += 1;
            }
            last.insert(gi, pi);
            prev.insert(gi, pi);
        }
        tp += m.len();
        fn_ += g.len() - m.len();
        fp += p.len() - m.len();
    }
    let n = (tp + fn_).max(1) as f64;
    ((tp as f64 - fp as f64 - idsw as f64) / n, idsw)
}

fn identity(frames: &[Frame], thr: f64) -> f64 {
    let gt_ids: Vec<TrackId> = frames.iter().flat_map(|(g, _)| g.iter().map(|d| d.0)).collect::<BTreeSet<_>>().into_iter().collect();
    let pred_ids: Vec<TrackId> =
        frames.iter().flat_map(|(_, p)| p.iter().map(|d| d.0)).collect::<BTreeSet<_>>().into_iter().collect();
    let n_gt: usize = frames.iter().map(|(g, _)| g.len()).sum();
    let n_pred: usize = frames.iter().map(|(_, p)| p.len()).sum();
    // Every injective partial map from ground-truth ids to predicted ids.
    fn maps(k: usize, gt: &[TrackId], pred: &[TrackId], cur: &mut BTreeMap<TrackId, TrackId>, out: &mut Vec<BTreeMap<TrackId, TrackId>>) {
        if k == gt.len() {
            out.push(cur.clone());
            return;
        }
        maps(k + 1, gt, pred, cur, out);
        for p in pred {
            if !cur.values().any(|v| v == p) {
                cur.insert(gt[k], *p);
                maps(k + 1, gt, pred, cur, out);
                cur.remove(&gt[k]);
            }
        }
    }
    let mut all = Vec::new();
    maps(0, &gt_ids, &pred_ids, &mut BTreeMap::new(), &mut all);
    let best = all
        .iter()
        .map(|m| {
            frames
                .iter()
                .map(|(g, p)| {
                    g.iter()
                        .filter(|(gi, gb)| {
                            m.get(gi).is_some_and(|pi| p.iter().any(|(q, pb)| q == pi && iou(gb, pb) >= thr - f64::EPSILON))
                        })
                        .count()
                })
                .sum::<usize>()
        })
        .max()
        .unwrap_or(0);
    let denom = (n_gt + n_pred) as f64;
    if denom == 0.0 {
        0.0
    } else {
        2.0 * best as f64 / denom
    }
}

fn hota(frames: &[Frame]) -> (f64, f64, f64) {
    let alphas: Vec<f64> = (1..=19).map(|k| k as f64 * 0.05).collect();
    let n_gt: usize = frames.iter().map(|(g, _)| g.len()).sum();
    let n_pred: usize = frames.iter().map(|(_, p)| p.len()).sum();
    if n_gt == 0 || n_pred == 0 {
        return (0.0, 0.0, 0.0);
    }
    let mut gt_count: HashMap<TrackId, f64> = HashMap::new();
    let mut pred_count: HashMap<TrackId, f64> = HashMap::new();
    let mut potential: HashMap<(TrackId, TrackId), f64> = HashMap::new();
    for (g, p) in frames {
        for (gi, gb) in g {
            *gt_count.entry(*gi).or_default() += 1.0;
            for (pi, pb) in p {
                let s = iou(gb, pb);
                let row: f64 = p.iter().map(|(_, b)| iou(gb, b)).sum();
                let col: f64 = g.iter().map(|(_, b)| iou(b, pb)).sum();
                let denom = row + col - s;
                if denom > f64::EPSILON {
                    *potential.entry((*gi, *pi)).or_default() += s / denom;
                }
            }
        }
        for (pi, _) in p {
            *pred_count.entry(*pi).or_default() += 1.0;
        }
    }
    let align = |g: TrackId, p: TrackId| {
        let m = potential.get(&(g, p)).copied().unwrap_or(0.0);
        m / (gt_count[&g] + pred_count[&p] - m)
    };
    let (mut h, mut d, mut a_sum) = (0.0, 0.0, 0.0);
    let matchings: Vec<Vec<(usize, usize)>> = frames
        .iter()
        .map(|(g, p)| {
            let w: Vec<Vec<Option<f64>>> = g
                .iter()
                .map(|(gi, gb)| {
                    p.iter()
                        .map(|(pi, pb)| Some(align(*gi, *pi) * iou(gb, pb)).filter(|s| *s > 0.0))
                        .collect()
                })
                .collect();
            best_matching(&w)
        })
        .collect();
    for alpha in alphas {
        let (mut tp, mut fn_, mut fp) = (0usize, 0usize, 0usize);
        let mut hits: HashMap<(TrackId, TrackId), f64> = HashMap::new();
        for ((g, p), m) in frames.iter().zip(&matchings) {
            let ok: Vec<_> = m.iter().filter(|&&(i, j)| iou(&g[i].1, &p[j].1) >= alpha - f64::EPSILON).collect();
            for &&(i, j) in &ok {
                *hits.entry((g[i].0, p[j].0)).or_default() += 1.0;
            }
            tp += ok.len();
            fn_ += g.len() - ok.len();
            fp += p.len() - ok.len();
        }
        let ass: f64 = hits
            .iter()
            .map(|(&(gi, pi), &c)| c * c / (gt_count[&gi] + pred_count[&pi] - c).max(1.0))
            .sum::<f64>()
            / tp.max(1) as f64;
        let det = tp as f64 / (tp + fn_ + fp).max(1) as f64;
        h += (det * ass).sqrt();
        d += det;
        a_sum += ass;
    }
    (h / 19.0, d / 19.0, a_sum / 19.0)
}

pub fn reference_scores(pred: &TrackSet, gt: &TrackSet) -> Reference {
    let f = frames(pred, gt);
    let (hota, det_a, ass_a) = hota(&f);
    let (mota, idsw) = clear(&f, 0.5);
    Reference { hota, det_a, ass_a, mota, idf1: identity(&f, 0.5), idsw }
}

fn random_box(rng: &mut ChaCha8Rng) -> (f64, f64, f64, f64) {
    let (w, h) = (rng.random_range(0.1..0.3), rng.random_range(0.1..0.3));
    (rng.random_range(0.0..1.0 - w), rng.random_range(0.0..1.0 - h), w, h)
}

/// A small ground truth (at most 3 ids, 6 frames) and a noisy prediction
/// with misses, false positives, identity swaps and localization error.
pub fn random_instance(seed: u64) -> (TrackSet, TrackSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = rng.random_range(1..=6u32);
    let n = rng.random_range(1..=3u32);
    let mut gt = TrackSet::new("s", frames, size());
    let mut pred = TrackSet::new("s", frames, size());
    let mut labels: Vec<TrackId> = (1..=4).collect();
    labels.shuffle(&mut rng);
    for id in 1..=n {
        let (mut x, mut y, w, h) = random_box(&mut rng);
        let noise = rng.random_range(0.0..0.08);
        for f in 0..frames {
            x = (x + rng.random_range(-0.03..0.03)).clamp(0.0, 1.0 - w);
            y = (y + rng.random_range(-0.03..0.03)).clamp(0.0, 1.0 - h);
            if rng.random::<f64>() < 0.85 {
                gt.insert(id, f, BBox::new(x, y, w, h).unwrap()).unwrap();
                if rng.random::<f64>() < 0.85 {
                    let label = if rng.random::<f64>() < 0.2 { labels[rng.random_range(0..4)] } else { labels[id as usize - 1] };
                    let j = |r: &mut ChaCha8Rng| r.random_range(-noise..=noise);
                    let b = BBox::saturating(x + j(&mut rng), y + j(&mut rng), w + j(&mut rng), h + j(&mut rng));
                    let _ = pred.insert(label, f, b);
                }
            }
        }
    }
    for f in 0..frames {
        if rng.random::<f64>() < 0.25 {
            let (x, y, w, h) = random_box(&mut rng);
            let _ = pred.insert(rng.random_range(1..=4), f, BBox::new(x, y, w, h).unwrap());
        }
    }
    (pred, gt)
}

/// Renames ids of a track set with an arbitrary injective map.
pub fn relabel_with(ts: &TrackSet, offset: TrackId, reverse: bool) -> TrackSet {
    let ids: Vec<TrackId> = ts.track_ids().collect();
    let map: BTreeMap<TrackId, TrackId> = ids
        .iter()
        .enumerate()
        .map(|(k, id)| (*id, offset + if reverse { (ids.len() - k) as TrackId } else { k as TrackId }))
        .collect();
    ts.relabel(&map).unwrap()
}
