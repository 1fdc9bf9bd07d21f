//! Flat `key = value` run configuration.
//!
//! `#` starts a comment. Unknown and repeated keys are rejected. The
//! effective configuration renders back to text that parses to the same
//! value, so a run directory's echo reproduces the run.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::ebrrl::{RewardWeights, TrainHoldConfig};
use crate::error::{Error, Result};
use crate::nets::{DetectorConfig, PredictorConfig};
use crate::spiral::FusionMode;
use crate::stem::ThermalSource;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub image_size: usize,
    pub epochs: usize,
    pub train_samples: usize,
    pub val_samples: usize,
    pub test_samples: usize,
    pub stem_block: bool,
    pub spiral_pool: bool,
    pub spiral_stages: [bool; 3],
    pub fusion: FusionMode,
    pub thermal_source: ThermalSource,
    pub predictor_lr: f32,
    pub detector_lr: f32,
    pub predictor_batch: usize,
    pub detector_batch: usize,
    pub discount: f64,
    pub buffer_size: usize,
    pub sampling_frequency: u64,
    pub replay_batch: usize,
    pub dropout: f32,
    pub exploration_std: f32,
    pub augment: bool,
    pub reward_weights: RewardWeights,
    pub score_threshold: f64,
    /// Validation metrics every this many epochs; 0 disables.
    pub eval_every: usize,
    /// Empty means generate the synthetic set from `seed`.
    pub data_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            image_size: 64,
            epochs: 100,
            train_samples: 256,
            val_samples: 64,
            test_samples: 64,
            stem_block: true,
            spiral_pool: true,
            spiral_stages: [true; 3],
            fusion: FusionMode::Multiply,
            thermal_source: ThermalSource::Luma,
            predictor_lr: 0.001,
            detector_lr: 0.001,
            predictor_batch: 32,
            detector_batch: 8,
            discount: 0.6,
            buffer_size: 10_000,
            sampling_frequency: 1000,
            replay_batch: 64,
            dropout: 0.4,
            exploration_std: 0.1,
            augment: true,
            reward_weights: RewardWeights::DEFAULT,
            score_threshold: 0.5,
            eval_every: 10,
            data_dir: None,
            output_dir: PathBuf::from("runs"),
        }
    }
}

/// Keys whose defaults are scaled down from the reference setup, with the
/// reference value.
pub const DESK_SCALE: [(&str, &str); 4] = [
    ("image_size", "380"),
    ("train_samples", "3000"),
    ("val_samples", "1000"),
    ("test_samples", "585"),
];

pub const KEYS: [&str; 27] = [
    "seed",
    "image_size",
    "epochs",
    "train_samples",
    "val_samples",
    "test_samples",
    "stem_block",
    "spiral_pool",
    "spiral_stages",
    "fusion",
    "thermal_source",
    "predictor_lr",
    "detector_lr",
    "predictor_batch",
    "detector_batch",
    "discount",
    "buffer_size",
    "sampling_frequency",
    "replay_batch",
    "dropout",
    "exploration_std",
    "augment",
    "reward_weights",
    "score_threshold",
    "eval_every",
    "data_dir",
    "output_dir",
];

fn on_off(v: bool) -> &'static str {
    if v {
        "on"
    } else {
        "off"
    }
}

fn parse_switch(key: &str, v: &str) -> Result<bool> {
    match v {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected on|off, got {v:?}"))),
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_list<const N: usize, T: Copy + Default>(
    key: &str,
    v: &str,
    item: impl Fn(&str) -> Result<T>,
) -> Result<[T; N]> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != N {
        return Err(Error::Config(format!(
            "{key}: expected {N} comma-separated values, got {v:?}"
        )));
    }
    let mut out = [T::default(); N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = item(p)?;
    }
    Ok(out)
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_num(key, v)?,
            "image_size" => self.image_size = parse_num(key, v)?,
            "epochs" => self.epochs = parse_num(key, v)?,
            "train_samples" => self.train_samples = parse_num(key, v)?,
            "val_samples" => self.val_samples = parse_num(key, v)?,
            "test_samples" => self.test_samples = parse_num(key, v)?,
            "stem_block" => self.stem_block = parse_switch(key, v)?,
            "spiral_pool" => self.spiral_pool = parse_switch(key, v)?,
            "spiral_stages" => self.spiral_stages = parse_list(key, v, |p| parse_switch(key, p))?,
            "fusion" => {
                self.fusion = v
                    .parse()
                    .map_err(|e| Error::Config(format!("{key}: {e}")))?
            }
            "thermal_source" => {
                self.thermal_source = v
                    .parse()
                    .map_err(|e| Error::Config(format!("{key}: {e}")))?
            }
            "predictor_lr" => self.predictor_lr = parse_num(key, v)?,
            "detector_lr" => self.detector_lr = parse_num(key, v)?,
            "predictor_batch" => self.predictor_batch = parse_num(key, v)?,
            "detector_batch" => self.detector_batch = parse_num(key, v)?,
            "discount" => self.discount = parse_num(key, v)?,
            "buffer_size" => self.buffer_size = parse_num(key, v)?,
            "sampling_frequency" => self.sampling_frequency = parse_num(key, v)?,
            "replay_batch" => self.replay_batch = parse_num(key, v)?,
            "dropout" => self.dropout = parse_num(key, v)?,
            "exploration_std" => self.exploration_std = parse_num(key, v)?,
            "augment" => self.augment = parse_switch(key, v)?,
            "reward_weights" => {
                let [p, t, d] = parse_list(key, v, |p| parse_num::<f64>(key, p))?;
                self.reward_weights = RewardWeights::new(p, t, d)
                    .map_err(|e| Error::Config(format!("{key}: {e}")))?;
            }
            "score_threshold" => self.score_threshold = parse_num(key, v)?,
            "eval_every" => self.eval_every = parse_num(key, v)?,
            "data_dir" => self.data_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            "output_dir" => self.output_dir = PathBuf::from(v),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected key = value, got {raw:?}",
                    i + 1
                )));
            };
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: {k:?} set twice", i + 1)));
            }
            cfg.set(k, v.trim()).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", i + 1)),
                other => other,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Missing(path.to_path_buf()));
        }
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.image_size < crate::synth::MIN_SIZE || !self.image_size.is_multiple_of(8) {
            return bad(format!(
                "image_size {} must be a multiple of 8 and at least 32",
                self.image_size
            ));
        }
        if self.train_samples == 0 || self.val_samples == 0 || self.test_samples == 0 {
            return bad("split sizes must be positive".into());
        }
        if self.predictor_batch == 0 || self.detector_batch == 0 || self.replay_batch == 0 {
            return bad("batch sizes must be positive".into());
        }
        if self.sampling_frequency == 0 || self.buffer_size == 0 {
            return bad("sampling_frequency and buffer_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.discount) {
            return bad(format!("discount {} outside [0, 1)", self.discount));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.predictor_lr > 0.0 && self.detector_lr > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.exploration_std.is_nan() || self.exploration_std < 0.0 {
            return bad("exploration_std must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return bad(format!(
                "score_threshold {} outside [0, 1]",
                self.score_threshold
            ));
        }
        Ok(())
    }

    /// Value of `key` as it appears in the rendered config.
    pub fn get(&self, key: &str) -> Option<String> {
        let list = |v: [bool; 3]| v.map(on_off).join(",");
        Some(match key {
            "seed" => self.seed.to_string(),
            "image_size" => self.image_size.to_string(),
            "epochs" => self.epochs.to_string(),
            "train_samples" => self.train_samples.to_string(),
            "val_samples" => self.val_samples.to_string(),
            "test_samples" => self.test_samples.to_string(),
            "stem_block" => on_off(self.stem_block).into(),
            "spiral_pool" => on_off(self.spiral_pool).into(),
            "spiral_stages" => list(self.spiral_stages),
            "fusion" => self.fusion.to_string(),
            "thermal_source" => self.thermal_source.to_string(),
            "predictor_lr" => self.predictor_lr.to_string(),
            "detector_lr" => self.detector_lr.to_string(),
            "predictor_batch" => self.predictor_batch.to_string(),
            "detector_batch" => self.detector_batch.to_string(),
            "discount" => self.discount.to_string(),
            "buffer_size" => self.buffer_size.to_string(),
            "sampling_frequency" => self.sampling_frequency.to_string(),
            "replay_batch" => self.replay_batch.to_string(),
            "dropout" => self.dropout.to_string(),
            "exploration_std" => self.exploration_std.to_string(),
            "augment" => on_off(self.augment).into(),
            "reward_weights" => {
                let w = self.reward_weights;
                format!("{},{},{}", w.parent, w.thermal, w.dark)
            }
            "score_threshold" => self.score_threshold.to_string(),
            "eval_every" => self.eval_every.to_string(),
            "data_dir" => self
                .data_dir
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
            "output_dir" => self.output_dir.display().to_string(),
            _ => return None,
        })
    }

    /// Every key in fixed order; desk-scale values carry a trailing tag
    /// naming the reference value.
    pub fn render(&self) -> String {
        let mut s = String::from("# effective configuration\n");
        for key in KEYS {
            let v = self.get(key).expect("known key");
            match DESK_SCALE.iter().find(|(k, _)| *k == key) {
                Some((_, reference)) => {
                    let _ = writeln!(
                        s,
                        "{key} = {v}  # desk-scale override (reference {reference})"
                    );
                }
                None => {
                    let _ = writeln!(s, "{key} = {v}");
                }
            }
        }
        s
    }

    /// Run label: `DetectorX`, `DetectorX-SB` without the stem block,
    /// `DetectorX-SP` without spiral pooling.
    pub fn model_name(&self) -> &'static str {
        match (self.stem_block, self.spiral_pool) {
            (true, true) => "DetectorX",
            (false, true) => "DetectorX-SB",
            (true, false) => "DetectorX-SP",
            (false, false) => "DetectorX-SB-SP",
        }
    }

    fn effective_spiral(&self) -> [bool; 3] {
        self.spiral_stages.map(|s| s && self.spiral_pool)
    }

    pub fn detector_config(&self) -> DetectorConfig {
        DetectorConfig {
            input_channels: if self.stem_block { 9 } else { 3 },
            image_size: self.image_size,
            spiral: self.effective_spiral(),
            fusion: self.fusion,
            dropout: self.dropout,
            ..DetectorConfig::default()
        }
    }

    pub fn predictor_config(&self) -> PredictorConfig {
        PredictorConfig {
            spiral: self.effective_spiral(),
            fusion: self.fusion,
            ..PredictorConfig::default()
        }
    }

    pub fn train_hold_config(&self) -> TrainHoldConfig {
        TrainHoldConfig {
            predictor_lr: self.predictor_lr,
            detector_lr: self.detector_lr,
            predictor_batch: self.predictor_batch,
            detector_batch: self.detector_batch,
            discount: self.discount,
            buffer_size: self.buffer_size,
            sampling_frequency: self.sampling_frequency,
            replay_batch: self.replay_batch,
            exploration_std: self.exploration_std,
            weights: self.reward_weights,
            thermal_source: self.thermal_source,
            augment: self.augment,
            seed: self.seed,
        }
    }
}
