//! A trained predictor/detector pair, its checkpoint format and the
//! detection sources used for evaluation.

use std::fs;
use std::path::Path;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::io::spfm::{self, Tensor};
use crate::metrics::{Detection, GroundTruth};
use crate::nets::{Detector, Predictor};
use crate::par;
use crate::stem::{build_modality_stack_with, clamp_predictions};
use crate::synth::{derive_seed, Sample};
use crate::tensor::{FeatureMap, Image};

/// Lowest score a decoded detection may have and still be ranked.
pub const DECODE_MIN_SCORE: f32 = 0.01;

pub const CHECKPOINT_CONFIG: &str = "model.cfg";
pub const CHECKPOINT_WEIGHTS: &str = "model.spfm";

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: RunConfig,
    /// Present when the stem block is on.
    pub predictor: Option<Predictor>,
    pub detector: Detector,
}

impl Model {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let predictor = cfg
            .stem_block
            .then(|| Predictor::new(cfg.predictor_config(), derive_seed(cfg.seed, 10, 0)));
        let detector = Detector::new(cfg.detector_config(), derive_seed(cfg.seed, 11, 0))?;
        Ok(Self {
            config: cfg.clone(),
            predictor,
            detector,
        })
    }

    /// Detector input: the modality stack under the predictor's
    /// deterministic action, or the normalized RGB image.
    pub fn detector_input(&self, img: &Image) -> Result<FeatureMap> {
        match &self.predictor {
            Some(p) => {
                let preds = clamp_predictions(&p.predict(img)?)?;
                Ok(build_modality_stack_with(img, &preds, self.config.thermal_source).stacked)
            }
            None => Ok(img.normalized()),
        }
    }

    pub fn params(&self) -> Vec<&[f32]> {
        let mut v = self
            .predictor
            .as_ref()
            .map(Predictor::params)
            .unwrap_or_default();
        v.extend(self.detector.net.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Vec<f32>> {
        let mut v = self
            .predictor
            .as_mut()
            .map(Predictor::params_mut)
            .unwrap_or_default();
        v.extend(self.detector.net.params_mut());
        v
    }

    /// Writes `model.cfg` and `model.spfm` (one record per parameter tensor)
    /// into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(CHECKPOINT_CONFIG), self.config.render())?;
        let tensors: Vec<Tensor> = self
            .params()
            .into_iter()
            .map(|p| Tensor::new(vec![p.len() as u32], p.to_vec()))
            .collect::<Result<_>>()?;
        spfm::write_file(&dir.join(CHECKPOINT_WEIGHTS), &tensors)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let cfg = RunConfig::load(&dir.join(CHECKPOINT_CONFIG))?;
        let weights_path = dir.join(CHECKPOINT_WEIGHTS);
        let tensors = spfm::read_file(&weights_path)?;
        let mut model = Self::new(&cfg)?;
        let mut slots = model.params_mut();
        if slots.len() != tensors.len() {
            return Err(Error::Format {
                path: weights_path,
                msg: format!("expected {} tensors, found {}", slots.len(), tensors.len()),
            });
        }
        for (i, (slot, t)) in slots.iter_mut().zip(tensors).enumerate() {
            if t.data.len() != slot.len() {
                return Err(Error::Format {
                    path: weights_path,
                    msg: format!(
                        "tensor {i}: expected {} values, found {}",
                        slot.len(),
                        t.data.len()
                    ),
                });
            }
            **slot = t.data;
        }
        Ok(model)
    }
}

/// Anything that turns a sample into detections.
pub trait DetectionSource: Sync {
    fn detect(&self, sample: &Sample, image_id: usize) -> Result<Vec<Detection>>;
}

impl DetectionSource for Model {
    fn detect(&self, sample: &Sample, image_id: usize) -> Result<Vec<Detection>> {
        let x = self.detector_input(&sample.image)?;
        self.detector.detect(&x, image_id, DECODE_MIN_SCORE)
    }
}

/// Reports every ground-truth box with full confidence.
#[derive(Debug, Clone, Copy, Default)]
pub struct GroundTruthOracle;

impl DetectionSource for GroundTruthOracle {
    fn detect(&self, sample: &Sample, image_id: usize) -> Result<Vec<Detection>> {
        Ok(sample
            .ground_truth(image_id)
            .into_iter()
            .map(|g| Detection {
                bbox: g.bbox,
                class: g.class,
                confidence: 1.0,
                image_id,
            })
            .collect())
    }
}

/// Detections and ground truth over a sample set; image ids are indices.
pub fn collect(
    source: &dyn DetectionSource,
    samples: &[Sample],
) -> Result<(Vec<Detection>, Vec<GroundTruth>)> {
    let per_image = par::map_indexed(samples, |i, s| source.detect(s, i));
    let mut dets = Vec::new();
    for d in per_image {
        dets.extend(d?);
    }
    let gts = samples
        .iter()
        .enumerate()
        .flat_map(|(i, s)| s.ground_truth(i))
        .collect();
    Ok((dets, gts))
}

pub fn evaluate(
    source: &dyn DetectionSource,
    samples: &[Sample],
    score_threshold: f64,
) -> Result<crate::metrics::EvalReport> {
    let (dets, gts) = collect(source, samples)?;
    Ok(crate::metrics::evaluate(&dets, &gts, score_threshold))
}
