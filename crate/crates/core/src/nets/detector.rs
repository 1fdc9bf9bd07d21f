//! Anchor-free grid detector: a four-stage conv trunk with optional spiral
//! pooling after the first three stages and a 1×1 head predicting
//! objectness, box and class logits per cell.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{Conv2d, PoolMode};
use super::loss::{bce_with_logit, cross_entropy, iou_loss, sigmoid, softmax, CenterBox};
use super::sequential::{Layer, Mode, Sequential};
use crate::error::{Error, Result};
use crate::metrics::{iou_unchecked, BBox, Detection, NUM_CLASSES};
use crate::spiral::FusionMode;
use crate::tensor::FeatureMap;

/// Head channels: objectness, four box terms, class logits.
pub const HEAD_CHANNELS: usize = 5 + NUM_CLASSES;

const BOX_IOU_WEIGHT: f32 = 5.0;
const BOX_L1_WEIGHT: f32 = 5.0;
/// IoU above which a lower-scoring same-class detection is suppressed.
pub const NMS_IOU: f64 = 0.5;
/// Detections kept per image after suppression.
pub const MAX_DETECTIONS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    /// 9 for the stacked modalities, 3 for RGB only.
    pub input_channels: usize,
    pub image_size: usize,
    pub widths: [usize; 4],
    pub spiral: [bool; 3],
    pub fusion: FusionMode,
    pub dropout: f32,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            input_channels: 9,
            image_size: 64,
            widths: [8, 16, 24, 32],
            spiral: [true; 3],
            fusion: FusionMode::Multiply,
            dropout: 0.4,
        }
    }
}

/// A training target in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    pub bbox: CenterBox,
    pub class: usize,
}

impl Target {
    /// From a pixel-space box on a square image of side `size`.
    pub fn from_pixels(b: &BBox, class: usize, size: usize) -> Self {
        let s = size as f64;
        Self {
            bbox: CenterBox::from_corners(
                (b.x1 / s) as f32,
                (b.y1 / s) as f32,
                (b.x2 / s) as f32,
                (b.y2 / s) as f32,
            ),
            class,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detector {
    pub config: DetectorConfig,
    pub net: Sequential,
    pub grid: usize,
}

/// Loss split by term, summed over the image.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub objectness: f32,
    pub boxes: f32,
    pub classes: f32,
}

impl LossParts {
    pub fn total(&self) -> f32 {
        self.objectness + self.boxes + self.classes
    }
}

/// Result of one per-image training pass.
#[derive(Debug, Clone)]
pub struct SampleStep {
    pub loss: LossParts,
    pub grads: Vec<Vec<f32>>,
    pub top_score: f32,
}

impl Detector {
    pub fn new(config: DetectorConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut ch = config.input_channels;
        for stage in 0..4 {
            let out = config.widths[stage];
            layers.push(Layer::Conv(Conv2d::init(ch, out, 3, 1, 1, &mut rng)));
            layers.push(Layer::Relu);
            ch = out;
            if stage < 3 {
                layers.push(Layer::Pool {
                    mode: PoolMode::Max,
                    kernel: 2,
                    stride: 2,
                });
                if config.spiral[stage] {
                    layers.push(Layer::Spiral(config.fusion));
                    ch *= 2;
                }
            }
        }
        layers.push(Layer::Dropout(config.dropout));
        let mut head = Conv2d::init(ch, HEAD_CHANNELS, 1, 1, 0, &mut rng);
        for w in &mut head.weight {
            *w *= 0.1;
        }
        // Start with low objectness so the many empty cells do not dominate.
        head.bias[0] = -2.0;
        layers.push(Layer::Conv(head));
        let net = Sequential::new(layers);
        let (c, g, g2) =
            net.output_shape((config.input_channels, config.image_size, config.image_size))?;
        if c != HEAD_CHANNELS || g != g2 || g == 0 {
            return Err(Error::shape((HEAD_CHANNELS, "square"), (c, g, g2)));
        }
        Ok(Self {
            config,
            net,
            grid: g,
        })
    }

    pub fn forward(&self, x: &FeatureMap, mode: Mode) -> Result<FeatureMap> {
        self.net.forward(x, mode)
    }

    /// Loss, parameter gradients and top cell score for one image.
    pub fn train_sample(
        &self,
        x: &FeatureMap,
        targets: &[Target],
        mode: Mode,
    ) -> Result<SampleStep> {
        let (out, tape) = self.net.forward_taped(x, mode)?;
        let (loss, grad) = detection_loss(&out, targets)?;
        let top_score = top_score(&out);
        let (_, grads) = self.net.backward(&tape, grad)?;
        Ok(SampleStep {
            loss,
            grads,
            top_score,
        })
    }

    /// Highest cell score in the image.
    pub fn top_confidence(&self, x: &FeatureMap) -> Result<f32> {
        Ok(top_score(&self.forward(x, Mode::Eval)?))
    }

    /// Decoded, suppressed detections in pixel coordinates.
    pub fn detect(
        &self,
        x: &FeatureMap,
        image_id: usize,
        min_score: f32,
    ) -> Result<Vec<Detection>> {
        let out = self.forward(x, Mode::Eval)?;
        Ok(decode(&out, self.config.image_size, image_id, min_score))
    }
}

fn top_score(out: &FeatureMap) -> f32 {
    cell_scores(out)
        .into_iter()
        .map(|(s, _)| s)
        .fold(0.0, f32::max)
}

/// One of the eight symmetries of the square: bit 0 mirrors columns, bit 1
/// mirrors rows, bit 2 transposes first. Applied to a square input and its
/// targets alike.
pub fn dihedral(x: &FeatureMap, targets: &[Target], transform: u8) -> (FeatureMap, Vec<Target>) {
    let (c, n, n2) = x.shape();
    debug_assert_eq!(n, n2);
    let (flip_x, flip_y, swap) = (transform & 1 != 0, transform & 2 != 0, transform & 4 != 0);
    let out = FeatureMap::from_fn(c, n, n, |ch, r, k| {
        let (r, k) = (
            if flip_y { n - 1 - r } else { r },
            if flip_x { n - 1 - k } else { k },
        );
        if swap {
            x.get(ch, k, r)
        } else {
            x.get(ch, r, k)
        }
    });
    let moved = targets
        .iter()
        .map(|t| {
            let mut b = t.bbox;
            if swap {
                b = CenterBox {
                    cx: b.cy,
                    cy: b.cx,
                    w: b.h,
                    h: b.w,
                };
            }
            if flip_x {
                b.cx = 1.0 - b.cx;
            }
            if flip_y {
                b.cy = 1.0 - b.cy;
            }
            Target {
                bbox: b,
                class: t.class,
            }
        })
        .collect();
    (out, moved)
}

/// Predicted box for cell `(row, col)` of a head output.
pub fn cell_box(out: &FeatureMap, row: usize, col: usize) -> CenterBox {
    let g = out.rows() as f32;
    CenterBox {
        cx: (col as f32 + sigmoid(out.get(1, row, col))) / g,
        cy: (row as f32 + sigmoid(out.get(2, row, col))) / g,
        w: sigmoid(out.get(3, row, col)),
        h: sigmoid(out.get(4, row, col)),
    }
}

fn cell_logits(out: &FeatureMap, row: usize, col: usize) -> [f32; NUM_CLASSES] {
    std::array::from_fn(|k| out.get(5 + k, row, col))
}

/// `(score, class)` per cell in row-major order, where score is objectness
/// times the top class probability.
pub fn cell_scores(out: &FeatureMap) -> Vec<(f32, usize)> {
    let g = out.rows();
    let mut v = Vec::with_capacity(g * g);
    for r in 0..g {
        for c in 0..out.cols() {
            let p = softmax(&cell_logits(out, r, c));
            let (cls, pmax) =
                p.iter().enumerate().fold(
                    (0, f32::MIN),
                    |acc, (i, &q)| if q > acc.1 { (i, q) } else { acc },
                );
            v.push((sigmoid(out.get(0, r, c)) * pmax, cls));
        }
    }
    v
}

/// Cell responsible for each target: the one containing its center. When
/// two targets share a cell the first one wins.
pub fn assign_cells(targets: &[Target], grid: usize) -> Vec<Option<usize>> {
    let mut owner = vec![None; grid * grid];
    for (i, t) in targets.iter().enumerate() {
        let col = ((t.bbox.cx * grid as f32).floor() as isize).clamp(0, grid as isize - 1) as usize;
        let row = ((t.bbox.cy * grid as f32).floor() as isize).clamp(0, grid as isize - 1) as usize;
        let cell = row * grid + col;
        if owner[cell].is_none() {
            owner[cell] = Some(i);
        }
    }
    owner
}

/// Objectness BCE over every cell, plus IoU and L1 box terms and class
/// cross-entropy on responsible cells. Returns the loss and its gradient
/// with respect to the head output.
pub fn detection_loss(out: &FeatureMap, targets: &[Target]) -> Result<(LossParts, FeatureMap)> {
    let (ch, g, g2) = out.shape();
    if ch != HEAD_CHANNELS || g != g2 {
        return Err(Error::shape((HEAD_CHANNELS, "square"), out.shape()));
    }
    let owner = assign_cells(targets, g);
    let mut grad = FeatureMap::zeros(ch, g, g);
    let mut parts = LossParts::default();
    for r in 0..g {
        for c in 0..g {
            let target = owner[r * g + c].map(|i| &targets[i]);
            let (l, d) = bce_with_logit(out.get(0, r, c), if target.is_some() { 1.0 } else { 0.0 });
            parts.objectness += l;
            grad.set(0, r, c, d);
            let Some(t) = target else { continue };

            let pred = cell_box(out, r, c);
            let (li, gi) = iou_loss(&pred, &t.bbox)?;
            let diff = [
                pred.cx - t.bbox.cx,
                pred.cy - t.bbox.cy,
                pred.w - t.bbox.w,
                pred.h - t.bbox.h,
            ];
            parts.boxes +=
                BOX_IOU_WEIGHT * li + BOX_L1_WEIGHT * diff.iter().map(|d| d.abs()).sum::<f32>();
            let inv_g = 1.0 / g as f32;
            for j in 0..4 {
                let s = sigmoid(out.get(1 + j, r, c));
                let dpred_dlogit = s * (1.0 - s) * if j < 2 { inv_g } else { 1.0 };
                let dl = BOX_IOU_WEIGHT * gi[j] + BOX_L1_WEIGHT * diff[j].signum();
                grad.set(1 + j, r, c, dl * dpred_dlogit);
            }

            let (lc, gc) = cross_entropy(&cell_logits(out, r, c), t.class);
            parts.classes += lc;
            for (k, v) in gc.into_iter().enumerate() {
                grad.set(5 + k, r, c, v);
            }
        }
    }
    if !parts.total().is_finite() {
        return Err(Error::non_finite("detection loss", format!("{parts:?}")));
    }
    Ok((parts, grad))
}

/// Turns a head output into pixel-space detections: score filter, then
/// class-wise greedy suppression, then the top [`MAX_DETECTIONS`].
pub fn decode(
    out: &FeatureMap,
    image_size: usize,
    image_id: usize,
    min_score: f32,
) -> Vec<Detection> {
    let g = out.rows();
    let s = image_size as f64;
    let mut cands = Vec::new();
    for (cell, (score, class)) in cell_scores(out).into_iter().enumerate() {
        if score < min_score {
            continue;
        }
        let b = cell_box(out, cell / g, cell % g);
        let [x1, y1, x2, y2] = b.corners().map(|v| (v as f64).clamp(0.0, 1.0) * s);
        if !(x1 < x2 && y1 < y2) {
            continue;
        }
        cands.push(Detection {
            bbox: BBox { x1, y1, x2, y2 },
            class,
            confidence: score as f64,
            image_id,
        });
    }
    cands.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let mut kept: Vec<Detection> = Vec::new();
    for d in cands {
        let suppressed = kept
            .iter()
            .any(|k| k.class == d.class && iou_unchecked(&k.bbox, &d.bbox) > NMS_IOU);
        if !suppressed {
            kept.push(d);
            if kept.len() == MAX_DETECTIONS {
                break;
            }
        }
    }
    kept
}
