//! Detection metrics: IoU, greedy matching, precision/recall/F1, all-points
//! interpolated AP, mAP/mAR over IoU 0.50:0.05:0.95 and a normalized
//! confusion matrix.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Damage classes in reporting order.
pub const CLASS_NAMES: [&str; 4] = ["undamaged", "flexural", "shear", "combined"];
pub const NUM_CLASSES: usize = 4;

/// IoU thresholds used by mAP and mAR.
pub const IOU_THRESHOLDS: [f64; 10] = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];

/// Default IoU threshold for a match.
pub const DEFAULT_IOU: f64 = 0.5;

/// Axis-aligned box in image units with `x1 < x2`, `y1 < y2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = Self { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x1 < self.x2 && self.y1 < self.y2) {
            return Err(Error::domain(format!("degenerate box {self:?}")));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            x1: self.x1 * s,
            y1: self.y1 * s,
            x2: self.x2 * s,
            y2: self.y2 * s,
        }
    }
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    Ok(iou_unchecked(a, b))
}

#[inline]
pub(crate) fn iou_unchecked(a: &BBox, b: &BBox) -> f64 {
    let iw = a.x2.min(b.x2) - a.x1.max(b.x1);
    let ih = a.y2.min(b.y2) - a.y1.max(b.y1);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    inter / (a.area() + b.area() - inter)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub class: usize,
    pub confidence: f64,
    pub image_id: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub bbox: BBox,
    pub class: usize,
    pub image_id: usize,
}

/// Outcome of matching detections against ground truth.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MatchResult {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// One flag per detection, in input order.
    pub matched: Vec<bool>,
}

/// Detection indices sorted by descending confidence, ties kept in input
/// order.
fn ranked(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence));
    order
}

/// Greedy confidence-ordered matching. Each detection claims the
/// highest-IoU unmatched ground truth of its own class and image when that
/// IoU reaches `iou_thr`. When `class_aware` is false any class may match.
fn greedy_match(
    dets: &[Detection],
    gts: &[GroundTruth],
    iou_thr: f64,
    class_aware: bool,
) -> (Vec<Option<usize>>, Vec<bool>) {
    let mut by_image: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, g) in gts.iter().enumerate() {
        by_image.entry(g.image_id).or_default().push(i);
    }
    let mut gt_used = vec![false; gts.len()];
    let mut assignment = vec![None; dets.len()];
    for di in ranked(dets) {
        let d = &dets[di];
        let Some(pool) = by_image.get(&d.image_id) else {
            continue;
        };
        let mut best: Option<(usize, f64)> = None;
        for &gi in pool {
            let g = &gts[gi];
            if gt_used[gi] || (class_aware && g.class != d.class) {
                continue;
            }
            let v = iou_unchecked(&d.bbox, &g.bbox);
            if v >= iou_thr && best.is_none_or(|(_, b)| v > b) {
                best = Some((gi, v));
            }
        }
        if let Some((gi, _)) = best {
            gt_used[gi] = true;
            assignment[di] = Some(gi);
        }
    }
    (assignment, gt_used)
}

/// Matches detections to ground truths (same image, same class).
pub fn match_detections(dets: &[Detection], gts: &[GroundTruth], iou_thr: f64) -> MatchResult {
    let (assignment, used) = greedy_match(dets, gts, iou_thr, true);
    let tp = used.iter().filter(|u| **u).count();
    MatchResult {
        tp,
        fp: dets.len() - tp,
        fn_: gts.len() - tp,
        matched: assignment.iter().map(Option::is_some).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// `TP/(TP+FP)`, `TP/(TP+FN)` and their harmonic mean; `0/0` is 0.
pub fn precision_recall_f1(m: &MatchResult) -> Prf {
    let tp = m.tp as f64;
    let precision = ratio(tp, tp + m.fp as f64);
    let recall = ratio(tp, tp + m.fn_ as f64);
    let f1 = ratio(2.0 * precision * recall, precision + recall);
    Prf {
        precision,
        recall,
        f1,
    }
}

/// All-points interpolated average precision. `None` when there is no
/// ground truth to recall.
pub fn average_precision(dets: &[Detection], gts: &[GroundTruth], iou_thr: f64) -> Option<f64> {
    if gts.is_empty() {
        return None;
    }
    let (assignment, _) = greedy_match(dets, gts, iou_thr, true);
    let n_gt = gts.len() as f64;
    let mut tp = 0.0;
    let mut points = Vec::with_capacity(dets.len());
    for (rank, di) in ranked(dets).into_iter().enumerate() {
        if assignment[di].is_some() {
            tp += 1.0;
        }
        points.push((tp / n_gt, tp / (rank + 1) as f64));
    }
    // Precision envelope from the right, then sum over recall steps.
    for i in (0..points.len().saturating_sub(1)).rev() {
        points[i].1 = points[i].1.max(points[i + 1].1);
    }
    let mut ap = 0.0;
    let mut prev_r = 0.0;
    for (r, p) in points {
        if r > prev_r {
            ap += (r - prev_r) * p;
            prev_r = r;
        }
    }
    Some(ap)
}

/// Fraction of ground truths matched when every detection is kept.
pub fn max_recall(dets: &[Detection], gts: &[GroundTruth], iou_thr: f64) -> Option<f64> {
    if gts.is_empty() {
        return None;
    }
    let m = match_detections(dets, gts, iou_thr);
    Some(m.tp as f64 / gts.len() as f64)
}

fn split_by_class(
    dets: &[Detection],
    gts: &[GroundTruth],
) -> Vec<(Vec<Detection>, Vec<GroundTruth>)> {
    (0..NUM_CLASSES)
        .map(|c| {
            (
                dets.iter().filter(|d| d.class == c).copied().collect(),
                gts.iter().filter(|g| g.class == c).copied().collect(),
            )
        })
        .collect()
}

fn mean_defined(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values
        .into_iter()
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Per-class AP at one threshold; `None` for classes without ground truth.
pub fn class_average_precision(
    dets: &[Detection],
    gts: &[GroundTruth],
    iou_thr: f64,
) -> [Option<f64>; NUM_CLASSES] {
    let parts = split_by_class(dets, gts);
    std::array::from_fn(|c| average_precision(&parts[c].0, &parts[c].1, iou_thr))
}

/// AP averaged over the classes that have ground truth.
pub fn mean_class_ap(dets: &[Detection], gts: &[GroundTruth], iou_thr: f64) -> Option<f64> {
    mean_defined(class_average_precision(dets, gts, iou_thr))
}

/// Max recall averaged over the classes that have ground truth.
pub fn mean_class_recall(dets: &[Detection], gts: &[GroundTruth], iou_thr: f64) -> Option<f64> {
    let parts = split_by_class(dets, gts);
    mean_defined(parts.iter().map(|(d, g)| max_recall(d, g, iou_thr)))
}

/// mAP and mAR averaged over [`IOU_THRESHOLDS`].
pub fn map_mar(dets: &[Detection], gts: &[GroundTruth]) -> Option<(f64, f64)> {
    let aps: Vec<f64> = IOU_THRESHOLDS
        .iter()
        .map(|&t| mean_class_ap(dets, gts, t))
        .collect::<Option<_>>()?;
    let ars: Vec<f64> = IOU_THRESHOLDS
        .iter()
        .map(|&t| mean_class_recall(dets, gts, t))
        .collect::<Option<_>>()?;
    let n = IOU_THRESHOLDS.len() as f64;
    Some((aps.iter().sum::<f64>() / n, ars.iter().sum::<f64>() / n))
}

/// Class confusion among matched boxes plus unmatched counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Confusion {
    /// `counts[gt][pred]` over matched pairs.
    pub counts: [[usize; NUM_CLASSES]; NUM_CLASSES],
    /// `counts` with each non-empty row scaled to sum to 1.
    pub normalized: [[f64; NUM_CLASSES]; NUM_CLASSES],
    /// Ground truths with no detection, per class.
    pub missed: [usize; NUM_CLASSES],
    /// Detections with no ground truth, per predicted class.
    pub background: [usize; NUM_CLASSES],
}

/// Class-agnostic greedy matching, then tallies `(gt class -> pred class)`.
pub fn normalized_confusion(dets: &[Detection], gts: &[GroundTruth], iou_thr: f64) -> Confusion {
    let (assignment, used) = greedy_match(dets, gts, iou_thr, false);
    let mut counts = [[0usize; NUM_CLASSES]; NUM_CLASSES];
    let mut background = [0usize; NUM_CLASSES];
    for (d, a) in dets.iter().zip(&assignment) {
        match a {
            Some(gi) => counts[gts[*gi].class][d.class] += 1,
            None => background[d.class] += 1,
        }
    }
    let mut missed = [0usize; NUM_CLASSES];
    for (g, u) in gts.iter().zip(&used) {
        if !u {
            missed[g.class] += 1;
        }
    }
    let normalized = std::array::from_fn(|r| {
        let total: usize = counts[r].iter().sum();
        std::array::from_fn(|c| ratio(counts[r][c] as f64, total as f64))
    });
    Confusion {
        counts,
        normalized,
        missed,
        background,
    }
}

/// Every reported quantity for one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub score_threshold: f64,
    pub prf: Prf,
    pub matches: MatchResult,
    /// Class-averaged AP at IoU 0.5.
    pub ap50: Option<f64>,
    pub class_ap50: [Option<f64>; NUM_CLASSES],
    pub ap_by_threshold: Vec<Option<f64>>,
    pub recall_by_threshold: Vec<Option<f64>>,
    pub map: Option<f64>,
    pub mar: Option<f64>,
    pub confusion: Confusion,
}

/// Evaluates detections: P/R/F1 on detections scoring at least
/// `score_threshold`, ranking metrics on all detections.
pub fn evaluate(dets: &[Detection], gts: &[GroundTruth], score_threshold: f64) -> EvalReport {
    let kept: Vec<Detection> = dets
        .iter()
        .filter(|d| d.confidence >= score_threshold)
        .copied()
        .collect();
    let matches = match_detections(&kept, gts, DEFAULT_IOU);
    let prf = precision_recall_f1(&matches);
    let ap_by_threshold: Vec<_> = IOU_THRESHOLDS
        .iter()
        .map(|&t| mean_class_ap(dets, gts, t))
        .collect();
    let recall_by_threshold: Vec<_> = IOU_THRESHOLDS
        .iter()
        .map(|&t| mean_class_recall(dets, gts, t))
        .collect();
    let avg = |v: &[Option<f64>]| -> Option<f64> {
        let all: Option<Vec<f64>> = v.iter().copied().collect();
        all.map(|a| a.iter().sum::<f64>() / a.len() as f64)
    };
    EvalReport {
        score_threshold,
        prf,
        ap50: ap_by_threshold[0],
        class_ap50: class_average_precision(dets, gts, DEFAULT_IOU),
        map: avg(&ap_by_threshold),
        mar: avg(&recall_by_threshold),
        ap_by_threshold,
        recall_by_threshold,
        confusion: normalized_confusion(&kept, gts, DEFAULT_IOU),
        matches,
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.6}"),
        None => "nan".to_string(),
    }
}

/// Header of every metric CSV.
pub const METRICS_HEADER: &str = "metric,class,threshold,value";

impl EvalReport {
    /// Long-format rows `metric,class,threshold,value` (no header).
    pub fn csv_rows(&self) -> Vec<String> {
        let mut rows = Vec::new();
        let t50 = "0.50";
        rows.push(format!("precision,all,{t50},{:.6}", self.prf.precision));
        rows.push(format!("recall,all,{t50},{:.6}", self.prf.recall));
        rows.push(format!("f1,all,{t50},{:.6}", self.prf.f1));
        rows.push(format!("ap,all,{t50},{}", fmt_opt(self.ap50)));
        for (c, v) in self.class_ap50.iter().enumerate() {
            rows.push(format!("ap,{},{t50},{}", CLASS_NAMES[c], fmt_opt(*v)));
        }
        for (t, v) in IOU_THRESHOLDS.iter().zip(&self.ap_by_threshold) {
            rows.push(format!("ap_at,all,{t:.2},{}", fmt_opt(*v)));
        }
        for (t, v) in IOU_THRESHOLDS.iter().zip(&self.recall_by_threshold) {
            rows.push(format!("recall_max_at,all,{t:.2},{}", fmt_opt(*v)));
        }
        rows.push(format!("map,all,0.50:0.95,{}", fmt_opt(self.map)));
        rows.push(format!("mar,all,0.50:0.95,{}", fmt_opt(self.mar)));
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(METRICS_HEADER);
        s.push('\n');
        for r in self.csv_rows() {
            s.push_str(&r);
            s.push('\n');
        }
        s
    }

    /// Confusion matrix as `gt_class,pred_class,value` rows plus the
    /// unmatched counts.
    pub fn confusion_csv(&self) -> String {
        let c = &self.confusion;
        let mut s = String::from("gt_class,pred_class,normalized,count\n");
        for (g, gt_name) in CLASS_NAMES.iter().enumerate() {
            for (p, pred_name) in CLASS_NAMES.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{gt_name},{pred_name},{:.6},{}",
                    c.normalized[g][p], c.counts[g][p]
                );
            }
        }
        for (name, missed) in CLASS_NAMES.iter().zip(&c.missed) {
            let _ = writeln!(s, "{name},missed,,{missed}");
        }
        for (name, background) in CLASS_NAMES.iter().zip(&c.background) {
            let _ = writeln!(s, "background,{name},,{background}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn det(bbox: BBox, class: usize, confidence: f64) -> Detection {
        Detection {
            bbox,
            class,
            confidence,
            image_id: 0,
        }
    }

    fn gt(bbox: BBox, class: usize) -> GroundTruth {
        GroundTruth {
            bbox,
            class,
            image_id: 0,
        }
    }

    #[test]
    fn iou_cases() {
        let a = b(0., 0., 2., 2.);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &b(3., 3., 4., 4.)).unwrap(), 0.0);
        assert!((iou(&a, &b(1., 1., 3., 3.)).unwrap() - 1.0 / 7.0).abs() < 1e-12);
        assert!(BBox::new(1., 0., 1., 2.).is_err());
    }

    #[test]
    fn match_cases() {
        let g = [gt(b(0., 0., 10., 10.), 1)];
        let m = match_detections(&[], &g, 0.5);
        assert_eq!((m.tp, m.fp, m.fn_), (0, 0, 1));
        let d = [
            det(b(0., 0., 10., 10.), 1, 0.9),
            det(b(1., 0., 10., 10.), 1, 0.8),
        ];
        let m = match_detections(&d, &g, 0.5);
        assert_eq!((m.tp, m.fp, m.fn_), (1, 1, 0));
        assert_eq!(m.matched, vec![true, false]);
        // Wrong class never matches.
        let m = match_detections(&[det(b(0., 0., 10., 10.), 2, 0.9)], &g, 0.5);
        assert_eq!((m.tp, m.fp, m.fn_), (0, 1, 1));
    }

    #[test]
    fn prf_cases() {
        let p = precision_recall_f1(&MatchResult {
            tp: 88,
            fp: 12,
            fn_: 16,
            matched: vec![],
        });
        assert!((p.precision - 0.88).abs() < 1e-12);
        assert!((p.recall - 88.0 / 104.0).abs() < 1e-12);
        let z = precision_recall_f1(&MatchResult::default());
        assert_eq!((z.precision, z.recall, z.f1), (0.0, 0.0, 0.0));
        let one = precision_recall_f1(&MatchResult {
            tp: 5,
            ..Default::default()
        });
        assert_eq!((one.precision, one.recall, one.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn ap_hand_case() {
        let g = [gt(b(0., 0., 10., 10.), 1), gt(b(20., 20., 30., 30.), 1)];
        let d = [
            det(b(0., 0., 10., 10.), 1, 0.9),
            det(b(50., 50., 60., 60.), 1, 0.8),
            det(b(20., 20., 30., 30.), 1, 0.7),
        ];
        let ap = average_precision(&d, &g, 0.5).unwrap();
        assert!((ap - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-9, "{ap}");
        assert_eq!(average_precision(&d[..1], &g[..1], 0.5), Some(1.0));
        assert_eq!(average_precision(&d[1..2], &g, 0.5), Some(0.0));
        assert_eq!(average_precision(&d, &[], 0.5), None);
    }

    #[test]
    fn perfect_detector() {
        let g = [gt(b(0., 0., 10., 10.), 1), gt(b(20., 20., 30., 30.), 3)];
        let d: Vec<_> = g.iter().map(|g| det(g.bbox, g.class, 0.9)).collect();
        assert_eq!(map_mar(&d, &g), Some((1.0, 1.0)));
        let c = normalized_confusion(&d, &g, 0.5);
        assert_eq!(c.normalized[1][1], 1.0);
        assert_eq!(c.normalized[3][3], 1.0);
        let r = evaluate(&d, &g, 0.5);
        assert_eq!(r.prf.f1, 1.0);
        assert_eq!(r.ap_by_threshold.len(), 10);
    }

    #[test]
    fn confusion_flexural_as_shear() {
        let g = [gt(b(0., 0., 10., 10.), 1), gt(b(20., 0., 30., 10.), 1)];
        let d: Vec<_> = g.iter().map(|g| det(g.bbox, 2, 0.9)).collect();
        let c = normalized_confusion(&d, &g, 0.5);
        assert_eq!(c.normalized[1], [0.0, 0.0, 1.0, 0.0]);
        assert_eq!(c.normalized[0], [0.0; 4]);
    }

    #[test]
    fn thresholds_are_the_sweep() {
        assert_eq!(IOU_THRESHOLDS.len(), 10);
        for (i, t) in IOU_THRESHOLDS.iter().enumerate() {
            assert!((t - (0.5 + 0.05 * i as f64)).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_schema() {
        let r = evaluate(&[], &[gt(b(0., 0., 1., 1.), 1)], 0.5);
        let csv = r.to_csv();
        assert!(csv.starts_with("metric,class,threshold,value\n"));
        for t in ["0.50", "0.55", "0.95"] {
            assert!(csv.contains(&format!("ap_at,all,{t},")));
        }
    }
}
