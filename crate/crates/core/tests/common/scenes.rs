use rand::Rng;
use rand_chacha::ChaCha8Rng;
use spiralx::metrics::{BBox, Detection, GroundTruth, NUM_CLASSES};

use super::rng;

pub struct Scene {
    pub dets: Vec<Detection>,
    pub gts: Vec<GroundTruth>,
}

fn random_box(r: &mut ChaCha8Rng) -> BBox {
    let x1 = r.random_range(0..56) as f64;
    let y1 = r.random_range(0..56) as f64;
    BBox::new(
        x1,
        y1,
        x1 + r.random_range(2..=24) as f64,
        y1 + r.random_range(2..=24) as f64,
    )
    .unwrap()
}

fn jitter(r: &mut ChaCha8Rng, b: &BBox) -> BBox {
    let mut d = || r.random_range(-3..=3) as f64;
    let (x1, y1) = (b.x1 + d(), b.y1 + d());
    BBox::new(
        x1,
        y1,
        (b.x2 + d()).max(x1 + 1.0),
        (b.y2 + d()).max(y1 + 1.0),
    )
    .unwrap()
}

/// A few images with ground truth, near-miss detections (some with the
/// wrong class, some duplicated) and background false positives.
/// Confidences are continuous, so there are no ranking ties.
pub fn scene(seed: u64) -> Scene {
    let mut r = rng(seed);
    let mut dets = Vec::new();
    let mut gts = Vec::new();
    for image_id in 0..r.random_range(1..=4) {
        for _ in 0..r.random_range(0..=5) {
            let g = GroundTruth {
                bbox: random_box(&mut r),
                class: r.random_range(0..NUM_CLASSES),
                image_id,
            };
            for _ in 0..r.random_range(0..=2) {
                let class = if r.random_bool(0.8) {
                    g.class
                } else {
                    r.random_range(0..NUM_CLASSES)
                };
                dets.push(Detection {
                    bbox: jitter(&mut r, &g.bbox),
                    class,
                    confidence: r.random(),
                    image_id,
                });
            }
            gts.push(g);
        }
        for _ in 0..r.random_range(0..=3) {
            dets.push(Detection {
                bbox: random_box(&mut r),
                class: r.random_range(0..NUM_CLASSES),
                confidence: r.random(),
                image_id,
            });
        }
    }
    Scene { dets, gts }
}

fn overlap(a: &BBox, b: &BBox) -> f64 {
    let w = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let h = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = w * h;
    let area = |b: &BBox| (b.x2 - b.x1) * (b.y2 - b.y1);
    inter / (area(a) + area(b) - inter)
}

/// Brute-force greedy matching: repeatedly take the most confident
/// unprocessed detection and give it the best unused ground truth of its
/// image and class. Returns the matched flag per detection.
pub fn brute_match(dets: &[Detection], gts: &[GroundTruth], thr: f64) -> Vec<bool> {
    let mut done = vec![false; dets.len()];
    let mut used = vec![false; gts.len()];
    let mut matched = vec![false; dets.len()];
    for _ in 0..dets.len() {
        let mut pick = None;
        for (i, d) in dets.iter().enumerate() {
            if !done[i] && pick.is_none_or(|p: usize| d.confidence > dets[p].confidence) {
                pick = Some(i);
            }
        }
        let i = pick.unwrap();
        done[i] = true;
        let d = &dets[i];
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if used[j] || g.image_id != d.image_id || g.class != d.class {
                continue;
            }
            let v = overlap(&d.bbox, &g.bbox);
            if v >= thr && best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        if let Some((j, _)) = best {
            used[j] = true;
            matched[i] = true;
        }
    }
    matched
}

pub fn brute_prf(dets: &[Detection], gts: &[GroundTruth], thr: f64) -> (f64, f64, f64) {
    let tp = brute_match(dets, gts, thr).iter().filter(|m| **m).count() as f64;
    let p = if dets.is_empty() {
        0.0
    } else {
        tp / dets.len() as f64
    };
    let r = if gts.is_empty() {
        0.0
    } else {
        tp / gts.len() as f64
    };
    let f = if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    };
    (p, r, f)
}

/// AP from scratch: precision and recall at every confidence cutoff by
/// re-matching the kept prefix, then the area under the right-maximum
/// precision envelope.
pub fn brute_ap(dets: &[Detection], gts: &[GroundTruth], thr: f64) -> Option<f64> {
    if gts.is_empty() {
        return None;
    }
    let mut cutoffs: Vec<f64> = dets.iter().map(|d| d.confidence).collect();
    cutoffs.sort_by(|a, b| b.total_cmp(a));
    let points: Vec<(f64, f64)> = cutoffs
        .iter()
        .map(|&c| {
            let kept: Vec<Detection> = dets.iter().filter(|d| d.confidence >= c).copied().collect();
            let (p, r, _) = brute_prf(&kept, gts, thr);
            (r, p)
        })
        .collect();
    let mut ap = 0.0;
    let mut prev = 0.0;
    for &(r, _) in &points {
        if r > prev {
            let best = points
                .iter()
                .filter(|(rr, _)| *rr >= r)
                .map(|(_, p)| *p)
                .fold(0.0, f64::max);
            ap += (r - prev) * best;
            prev = r;
        }
    }
    Some(ap)
}
