//! IoU, detection and regression losses with analytic gradients.

use crate::error::{Error, Result};

/// Box as normalized center and size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenterBox {
    pub cx: f32,
    pub cy: f32,
    pub w: f32,
    pub h: f32,
}

impl CenterBox {
    pub fn from_corners(x1: f32, y1: f32, x2: f32, y2: f32) -> Self {
        Self {
            cx: 0.5 * (x1 + x2),
            cy: 0.5 * (y1 + y2),
            w: x2 - x1,
            h: y2 - y1,
        }
    }

    pub fn corners(&self) -> [f32; 4] {
        [
            self.cx - 0.5 * self.w,
            self.cy - 0.5 * self.h,
            self.cx + 0.5 * self.w,
            self.cy + 0.5 * self.h,
        ]
    }
}

/// `1 - IoU(pred, gt)` and its gradient with respect to `(cx, cy, w, h)`
/// of the prediction.
pub fn iou_loss(pred: &CenterBox, gt: &CenterBox) -> Result<(f32, [f32; 4])> {
    if !(gt.w > 0.0 && gt.h > 0.0) {
        return Err(Error::domain(format!("degenerate ground-truth box {gt:?}")));
    }
    if [pred.cx, pred.cy, pred.w, pred.h]
        .iter()
        .any(|v| !v.is_finite())
    {
        return Err(Error::non_finite("predicted box", format!("{pred:?}")));
    }
    if !(pred.w > 0.0 && pred.h > 0.0) {
        return Err(Error::domain(format!("degenerate predicted box {pred:?}")));
    }
    let [px1, py1, px2, py2] = pred.corners();
    let [gx1, gy1, gx2, gy2] = gt.corners();
    let iw = px2.min(gx2) - px1.max(gx1);
    let ih = py2.min(gy2) - py1.max(gy1);
    if iw <= 0.0 || ih <= 0.0 {
        return Ok((1.0, [0.0; 4]));
    }
    let inter = iw * ih;
    let union = pred.w * pred.h + gt.w * gt.h - inter;
    let iou = inter / union;

    // Partial derivatives of the intersection extent w.r.t. pred corners.
    let diw_dx1 = if px1 > gx1 { -1.0 } else { 0.0 };
    let diw_dx2 = if px2 < gx2 { 1.0 } else { 0.0 };
    let dih_dy1 = if py1 > gy1 { -1.0 } else { 0.0 };
    let dih_dy2 = if py2 < gy2 { 1.0 } else { 0.0 };

    // Through x1 = cx - w/2, x2 = cx + w/2.
    let diw_dcx = diw_dx1 + diw_dx2;
    let diw_dw = 0.5 * (diw_dx2 - diw_dx1);
    let dih_dcy = dih_dy1 + dih_dy2;
    let dih_dh = 0.5 * (dih_dy2 - dih_dy1);

    let di = [diw_dcx * ih, dih_dcy * iw, diw_dw * ih, dih_dh * iw];
    let darea = [0.0, 0.0, pred.h, pred.w];
    let mut grad = [0.0f32; 4];
    for j in 0..4 {
        let du = darea[j] - di[j];
        grad[j] = -(di[j] * union - inter * du) / (union * union);
    }
    Ok((1.0 - iou, grad))
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy on a logit, and its derivative.
#[inline]
pub fn bce_with_logit(logit: f32, target: f32) -> (f32, f32) {
    // max(x, 0) - x t + ln(1 + e^-|x|)
    let loss = logit.max(0.0) - logit * target + (-logit.abs()).exp().ln_1p();
    (loss, sigmoid(logit) - target)
}

pub fn softmax(logits: &[f32]) -> Vec<f32> {
    let m = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let e: Vec<f32> = logits.iter().map(|v| (v - m).exp()).collect();
    let s: f32 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Softmax cross-entropy for class `target`, and its gradient.
pub fn cross_entropy(logits: &[f32], target: usize) -> (f32, Vec<f32>) {
    let p = softmax(logits);
    let loss = -(p[target].max(1e-30)).ln();
    let mut grad = p;
    grad[target] -= 1.0;
    (loss, grad)
}
