//! The train-hold round: the predictor acts, holds while the detector
//! trains one epoch on the resulting modality stacks, then learns from the
//! shared reward.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::policy::policy_update;
use super::replay::{ReplayBuffer, Transition, BUFFER_CAPACITY, DIGEST_LEN};
use super::reward::{aggregate_reward_with, ActionRecord, RewardWeights};
use crate::error::{Error, Result};
use crate::nets::detector::dihedral;
use crate::nets::sequential::accumulate;
use crate::nets::{AdamState, Detector, Mode, Predictor, Target};
use crate::par;
use crate::stem::{
    build_modality_stack_with, clamp_predictions, ModalityStack, ThermalSource, RAW_PREDICTIONS,
};
use crate::tensor::{FeatureMap, Image};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHoldConfig {
    pub predictor_lr: f32,
    pub detector_lr: f32,
    pub predictor_batch: usize,
    pub detector_batch: usize,
    pub discount: f64,
    pub buffer_size: usize,
    /// Predictor steps between replay updates.
    pub sampling_frequency: u64,
    pub replay_batch: usize,
    /// Std of the Gaussian exploration noise, relative to each parameter's
    /// range.
    pub exploration_std: f32,
    pub weights: RewardWeights,
    pub thermal_source: ThermalSource,
    /// Random flips and transposes of each detector training sample.
    pub augment: bool,
    pub seed: u64,
}

impl Default for TrainHoldConfig {
    fn default() -> Self {
        Self {
            predictor_lr: 0.001,
            detector_lr: 0.001,
            predictor_batch: 32,
            detector_batch: 8,
            discount: 0.6,
            buffer_size: BUFFER_CAPACITY,
            sampling_frequency: 1000,
            replay_batch: 64,
            exploration_std: 0.1,
            weights: RewardWeights::DEFAULT,
            thermal_source: ThermalSource::Luma,
            augment: true,
            seed: 0,
        }
    }
}

/// Phases of a round, logged in the order they happen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    PredictorAct { round: u64 },
    ChildScores { round: u64 },
    HoldBegin { round: u64 },
    DetectorStep { round: u64, batch: usize },
    HoldEnd { round: u64 },
    Reward { round: u64 },
    PredictorUpdate { round: u64 },
    ReplayUpdate { round: u64, at_step: u64 },
    ReplaySkipped { round: u64, at_step: u64 },
}

/// Predictor with its optimizer and experience buffer.
#[derive(Debug, Clone)]
pub struct StemAgent {
    pub predictor: Predictor,
    pub adam: AdamState,
    pub buffer: ReplayBuffer,
}

/// Per-round outcome. Predictor fields are `None` when the stem is off.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeReport {
    pub round: u64,
    pub predictor_steps: u64,
    pub predictor_loss: Option<f64>,
    /// Mean loss of the replay updates that ran this round.
    pub replay_loss: Option<f64>,
    pub replay_updates: usize,
    /// Mean per-image detector loss over the epoch.
    pub detector_loss: f64,
    pub parent_score: f64,
    pub child_thermal_score: Option<f64>,
    pub child_dark_score: Option<f64>,
    pub reward: Option<f64>,
}

pub const EPISODE_HEADER: &str = "round,predictor_steps,predictor_loss,replay_loss,detector_loss,parent_score,child_thermal_score,child_dark_score,reward";

fn opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_default()
}

impl EpisodeReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{:.6},{},{},{}",
            self.round,
            self.predictor_steps,
            opt(self.predictor_loss),
            opt(self.replay_loss),
            self.detector_loss,
            self.parent_score,
            opt(self.child_thermal_score),
            opt(self.child_dark_score),
            opt(self.reward),
        )
    }
}

/// Training images with their targets.
#[derive(Debug, Clone, Copy)]
pub struct TrainSet<'a> {
    pub images: &'a [Image],
    pub targets: &'a [Vec<Target>],
}

/// Sixteen summary values: RGB channel means and stds, thermal and dark
/// channel means, thermal and dark overall std, running detector loss and
/// the previous reward.
pub fn state_digest(
    stack: &ModalityStack,
    running_loss: f64,
    last_reward: f64,
) -> [f32; DIGEST_LEN] {
    fn stats(xs: &[f32]) -> (f64, f64) {
        let n = xs.len().max(1) as f64;
        let mean = xs.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = xs.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    }
    let mut d = [0.0f32; DIGEST_LEN];
    let rgb = stack.rgb.as_map();
    for c in 0..3 {
        let (m, s) = stats(rgb.channel(c));
        d[c] = (m / 255.0) as f32;
        d[3 + c] = (s / 255.0) as f32;
    }
    for (block, img) in [&stack.tl, &stack.dt].into_iter().enumerate() {
        let map = img.as_map();
        for c in 0..3 {
            d[6 + 3 * block + c] = (stats(map.channel(c)).0 / 255.0) as f32;
        }
        d[12 + block] = (stats(map.data()).1 / 255.0) as f32;
    }
    d[14] = running_loss as f32;
    d[15] = last_reward as f32;
    d
}

#[derive(Debug, Clone)]
pub struct Orchestrator {
    pub config: TrainHoldConfig,
    pub detector: Detector,
    pub detector_adam: AdamState,
    /// `None` trains the detector on RGB alone.
    pub stem: Option<StemAgent>,
    pub round: u64,
    pub predictor_steps: u64,
    pub running_loss: f64,
    pub last_reward: f64,
    pub events: Vec<Event>,
    rng: ChaCha8Rng,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z =
        seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Orchestrator {
    pub fn new(
        config: TrainHoldConfig,
        detector: Detector,
        predictor: Option<Predictor>,
    ) -> Result<Self> {
        if config.predictor_batch == 0 || config.detector_batch == 0 || config.replay_batch == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if config.sampling_frequency == 0 {
            return Err(Error::Config("sampling frequency must be positive".into()));
        }
        if !(0.0..1.0).contains(&config.discount) {
            return Err(Error::Config(format!(
                "discount {} outside [0, 1)",
                config.discount
            )));
        }
        RewardWeights::new(
            config.weights.parent,
            config.weights.thermal,
            config.weights.dark,
        )?;
        let stem = predictor.map(|predictor| StemAgent {
            predictor,
            adam: AdamState::new(config.predictor_lr),
            buffer: ReplayBuffer::new(config.buffer_size, mix(config.seed, 1, 0)),
        });
        let expected = if stem.is_some() { 9 } else { 3 };
        if detector.config.input_channels != expected {
            return Err(Error::Config(format!(
                "detector takes {} channels but the stem setting needs {expected}",
                detector.config.input_channels
            )));
        }
        Ok(Self {
            detector_adam: AdamState::new(config.detector_lr),
            rng: ChaCha8Rng::seed_from_u64(mix(config.seed, 2, 0)),
            config,
            detector,
            stem,
            round: 0,
            predictor_steps: 0,
            running_loss: 0.0,
            last_reward: 0.0,
            events: Vec::new(),
        })
    }

    /// Runs one round. An error leaves the replay buffer untouched.
    pub fn train_hold_step(&mut self, data: TrainSet<'_>) -> Result<EpisodeReport> {
        let n = data.images.len();
        if n == 0 || data.targets.len() != n {
            return Err(Error::shape(n, data.targets.len()));
        }
        self.round += 1;
        let round = self.round;

        // Act: one (noisy) action per training image; the episode batch is
        // the subset whose transitions are recorded.
        let acting = match &self.stem {
            Some(agent) => {
                let raw = par::map(data.images, |img| agent.predictor.predict(img));
                let noise = self.exploration_noise(n);
                let mut actions = Vec::with_capacity(n);
                for (r, z) in raw.into_iter().zip(noise) {
                    let mut a = r?;
                    a.iter_mut().zip(z).for_each(|(v, e)| *v += e);
                    actions.push(clamp_predictions(&a)?);
                }
                let source = self.config.thermal_source;
                let stacks: Vec<ModalityStack> = par::map_indexed(data.images, |i, img| {
                    build_modality_stack_with(img, &actions[i], source)
                });
                let episode: Vec<usize> =
                    index::sample(&mut self.rng, n, self.config.predictor_batch.min(n)).into_vec();
                self.events.push(Event::PredictorAct { round });
                Some((actions, stacks, episode))
            }
            None => None,
        };

        let (child_t, child_d) = match &acting {
            Some((_, stacks, episode)) => {
                let det = &self.detector;
                let scores = par::map(episode, |&i| -> Result<(f32, f32)> {
                    Ok((
                        det.top_confidence(&stacks[i].thermal_only())?,
                        det.top_confidence(&stacks[i].dark_only())?,
                    ))
                });
                let (mut t, mut d) = (0.0f64, 0.0f64);
                for s in scores {
                    let (a, b) = s?;
                    t += a as f64;
                    d += b as f64;
                }
                self.events.push(Event::ChildScores { round });
                let m = episode.len() as f64;
                (Some(t / m), Some(d / m))
            }
            None => (None, None),
        };

        // Hold: one supervised detector epoch.
        self.events.push(Event::HoldBegin { round });
        let inputs: Vec<FeatureMap> = match &acting {
            Some((_, stacks, _)) => stacks.iter().map(|s| s.stacked.clone()).collect(),
            None => data.images.iter().map(Image::normalized).collect(),
        };
        let (detector_loss, parent) = self.detector_epoch(&inputs, data.targets)?;
        self.events.push(Event::HoldEnd { round });

        let mut report = EpisodeReport {
            round,
            predictor_steps: self.predictor_steps,
            predictor_loss: None,
            replay_loss: None,
            replay_updates: 0,
            detector_loss,
            parent_score: parent,
            child_thermal_score: child_t,
            child_dark_score: child_d,
            reward: None,
        };
        let prev_loss = self.running_loss;
        self.running_loss = if round == 1 {
            detector_loss
        } else {
            0.9 * self.running_loss + 0.1 * detector_loss
        };

        let (Some((actions, stacks, episode)), Some(agent)) = (acting, self.stem.as_mut()) else {
            return Ok(report);
        };
        let reward = aggregate_reward_with(
            &ActionRecord {
                parent_score: parent.clamp(0.0, 1.0),
                child_thermal_score: child_t.unwrap_or(0.0).clamp(0.0, 1.0),
                child_dark_score: child_d.unwrap_or(0.0).clamp(0.0, 1.0),
            },
            &self.config.weights,
        )?;
        self.events.push(Event::Reward { round });
        report.reward = Some(reward);

        let mut fresh = Vec::with_capacity(episode.len());
        for &i in &episode {
            let t = Transition {
                state: state_digest(&stacks[i], prev_loss, self.last_reward),
                action: actions[i].to_array(),
                reward,
                next_state: state_digest(&stacks[i], self.running_loss, reward),
                terminal: false,
                sample: i,
            };
            t.validate()?;
            fresh.push(t);
        }
        self.last_reward = reward;
        for t in &fresh {
            agent.buffer.push(t.clone());
        }
        let before = self.predictor_steps;
        self.predictor_steps += fresh.len() as u64;
        report.predictor_steps = self.predictor_steps;

        let gamma = self.config.discount;
        report.predictor_loss = Some(policy_update(
            &mut agent.predictor,
            &mut agent.adam,
            &fresh,
            data.images,
            gamma,
        )?);
        self.events.push(Event::PredictorUpdate { round });

        let freq = self.config.sampling_frequency;
        let mut replay_total = 0.0;
        for k in (before / freq + 1)..=(self.predictor_steps / freq) {
            let at_step = k * freq;
            match agent.buffer.sample_batch(self.config.replay_batch) {
                Ok(batch) => {
                    replay_total += policy_update(
                        &mut agent.predictor,
                        &mut agent.adam,
                        &batch,
                        data.images,
                        gamma,
                    )?;
                    report.replay_updates += 1;
                    self.events.push(Event::ReplayUpdate { round, at_step });
                }
                Err(Error::NotReady { .. }) => {
                    self.events.push(Event::ReplaySkipped { round, at_step })
                }
                Err(e) => return Err(e),
            }
        }
        if report.replay_updates > 0 {
            report.replay_loss = Some(replay_total / report.replay_updates as f64);
        }
        Ok(report)
    }

    fn exploration_noise(&mut self, n: usize) -> Vec<[f32; RAW_PREDICTIONS]> {
        let std = self.config.exploration_std;
        if std <= 0.0 {
            return vec![[0.0; RAW_PREDICTIONS]; n];
        }
        let normal = Normal::new(0.0f32, std).expect("positive std");
        // The colormap id spans 1..4, the other parameters 0..1.
        let ranges = [3.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        (0..n)
            .map(|_| std::array::from_fn(|j| ranges[j] * normal.sample(&mut self.rng)))
            .collect()
    }

    /// One shuffled pass over the training inputs. Returns the mean loss per
    /// image and the mean top cell score.
    fn detector_epoch(
        &mut self,
        inputs: &[FeatureMap],
        targets: &[Vec<Target>],
    ) -> Result<(f64, f64)> {
        let round = self.round;
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        order.shuffle(&mut self.rng);
        let epoch_seed: u64 = self.rng.random();
        let mut loss_sum = 0.0f64;
        let mut score_sum = 0.0f64;
        for (b, chunk) in order.chunks(self.config.detector_batch).enumerate() {
            let det = &self.detector;
            let augment = self.config.augment;
            let steps = par::map(chunk, |&i| {
                let seed = mix(epoch_seed, i as u64, 0);
                let mode = Mode::Train { seed };
                if augment {
                    let (x, t) = dihedral(&inputs[i], &targets[i], (seed >> 61) as u8);
                    det.train_sample(&x, &t, mode)
                } else {
                    det.train_sample(&inputs[i], &targets[i], mode)
                }
            });
            let mut grads: Option<Vec<Vec<f32>>> = None;
            for s in steps {
                let s = s?;
                loss_sum += s.loss.total() as f64;
                score_sum += s.top_score as f64;
                match grads.as_mut() {
                    Some(acc) => accumulate(acc, &s.grads),
                    None => grads = Some(s.grads),
                }
            }
            let mut grads = grads.unwrap_or_default();
            let scale = 1.0 / chunk.len() as f32;
            grads.iter_mut().flatten().for_each(|g| *g *= scale);
            self.detector_adam
                .step(&mut self.detector.net.params_mut(), &grads)?;
            self.events.push(Event::DetectorStep { round, batch: b });
        }
        let n = inputs.len() as f64;
        Ok((loss_sum / n, score_sum / n))
    }
}
