//! Small CNN that maps an RGB image to the seven raw modality parameters.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{Conv2d, Dense, PoolMode};
use super::sequential::{Layer, Mode, Sequential, Tape};
use crate::error::{Error, Result};
use crate::spiral::FusionMode;
use crate::stem::RAW_PREDICTIONS;
use crate::tensor::{FeatureMap, Image};

/// Head bias at initialisation: colormap 2.5, alpha 0.5, then a mildly
/// darkened, desaturated theme.
pub const PRIOR: [f32; RAW_PREDICTIONS] = [2.5, 0.5, 0.4, 0.6, 0.6, 0.5, 0.1];

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorConfig {
    pub widths: [usize; 3],
    pub spiral: [bool; 3],
    pub fusion: FusionMode,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            widths: [4, 8, 8],
            spiral: [true; 3],
            fusion: FusionMode::Multiply,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    pub config: PredictorConfig,
    pub trunk: Sequential,
    /// Colormap id and alpha.
    pub thermal_head: Dense,
    /// Brightness, contrast, gamma, saturation, hue shift.
    pub dark_head: Dense,
}

/// Forward state kept for one backward pass.
#[derive(Debug, Clone)]
pub struct PredictorTape {
    tape: Tape,
    features: Vec<f32>,
}

impl Predictor {
    pub fn new(config: PredictorConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut ch = 3;
        for stage in 0..3 {
            let out = config.widths[stage];
            layers.push(Layer::Conv(Conv2d::init(ch, out, 3, 1, 1, &mut rng)));
            layers.push(Layer::Relu);
            layers.push(Layer::Pool {
                mode: PoolMode::Max,
                kernel: 2,
                stride: 2,
            });
            ch = out;
            if config.spiral[stage] {
                layers.push(Layer::Spiral(config.fusion));
                ch *= 2;
            }
        }
        layers.push(Layer::GlobalAvgPool);
        let mut thermal_head = Dense::init(ch, 2, 0.1, &mut rng);
        let mut dark_head = Dense::init(ch, 5, 0.1, &mut rng);
        thermal_head.bias.copy_from_slice(&PRIOR[..2]);
        dark_head.bias.copy_from_slice(&PRIOR[2..]);
        Self {
            config,
            trunk: Sequential::new(layers),
            thermal_head,
            dark_head,
        }
    }

    pub fn predict(&self, img: &Image) -> Result<[f32; RAW_PREDICTIONS]> {
        Ok(self.forward_taped(img)?.0)
    }

    pub fn forward_taped(&self, img: &Image) -> Result<([f32; RAW_PREDICTIONS], PredictorTape)> {
        let (feat, tape) = self.trunk.forward_taped(&img.normalized(), Mode::Eval)?;
        let features = feat.into_vec();
        let t = self.thermal_head.forward(&features)?;
        let d = self.dark_head.forward(&features)?;
        let mut out = [0.0; RAW_PREDICTIONS];
        out[..2].copy_from_slice(&t);
        out[2..].copy_from_slice(&d);
        if let Some(bad) = out.iter().find(|v| !v.is_finite()) {
            return Err(Error::non_finite("predictor output", format!("{bad}")));
        }
        Ok((out, PredictorTape { tape, features }))
    }

    /// Parameter gradients for an upstream gradient on the seven outputs,
    /// in [`Predictor::params_mut`] order.
    pub fn backward(
        &self,
        tape: &PredictorTape,
        upstream: &[f32; RAW_PREDICTIONS],
    ) -> Result<Vec<Vec<f32>>> {
        let tg = self.thermal_head.backward(&tape.features, &upstream[..2])?;
        let dg = self.dark_head.backward(&tape.features, &upstream[2..])?;
        let feat_grad: Vec<f32> = tg.input.iter().zip(&dg.input).map(|(a, b)| a + b).collect();
        let n = feat_grad.len();
        let (_, mut grads) = self
            .trunk
            .backward(&tape.tape, FeatureMap::from_vec(n, 1, 1, feat_grad)?)?;
        grads.extend([tg.weight, tg.bias, dg.weight, dg.bias]);
        Ok(grads)
    }

    pub fn params(&self) -> Vec<&[f32]> {
        let mut p = self.trunk.params();
        p.extend([
            self.thermal_head.weight.as_slice(),
            self.thermal_head.bias.as_slice(),
            self.dark_head.weight.as_slice(),
            self.dark_head.bias.as_slice(),
        ]);
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f32>> {
        let mut p = self.trunk.params_mut();
        p.extend([
            &mut self.thermal_head.weight,
            &mut self.thermal_head.bias,
            &mut self.dark_head.weight,
            &mut self.dark_head.bias,
        ]);
        p
    }
}
