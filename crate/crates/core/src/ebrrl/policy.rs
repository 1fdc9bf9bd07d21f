//! Reward-weighted regression of the predictor toward actions it took.

use crate::error::{Error, Result};
use crate::nets::sequential::accumulate;
use crate::nets::{AdamState, Predictor};
use crate::par;
use crate::stem::RAW_PREDICTIONS;
use crate::tensor::Image;

use super::replay::Transition;

/// Per-transition regression weight: `reward + gamma * bootstrap`, where
/// the bootstrap is the batch mean reward and zero for terminal steps.
pub fn regression_weights(batch: &[Transition], gamma: f64) -> Vec<f64> {
    let mean = batch.iter().map(|t| t.reward).sum::<f64>() / batch.len().max(1) as f64;
    batch
        .iter()
        .map(|t| t.reward + if t.terminal { 0.0 } else { gamma * mean })
        .collect()
}

/// One Adam step on the weighted MSE between the predictor's current output
/// for each transition's image and the stored action. Returns the loss
/// before the step.
pub fn policy_update(
    predictor: &mut Predictor,
    adam: &mut AdamState,
    batch: &[Transition],
    images: &[Image],
    gamma: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::domain("empty policy batch"));
    }
    if let Some(t) = batch.iter().find(|t| t.sample >= images.len()) {
        return Err(Error::domain(format!(
            "transition refers to missing image {}",
            t.sample
        )));
    }
    let weights = regression_weights(batch, gamma);
    let n = batch.len() as f64;
    let model = &*predictor;
    let per_sample = par::map_indexed(batch, |i, t| -> Result<(f64, Vec<Vec<f32>>)> {
        let (out, tape) = model.forward_taped(&images[t.sample])?;
        let w = weights[i];
        let mut loss = 0.0f64;
        let mut upstream = [0.0f32; RAW_PREDICTIONS];
        for j in 0..RAW_PREDICTIONS {
            let d = (out[j] - t.action[j]) as f64;
            loss += w * d * d / RAW_PREDICTIONS as f64;
            upstream[j] = (w * 2.0 * d / (RAW_PREDICTIONS as f64 * n)) as f32;
        }
        Ok((loss / n, model.backward(&tape, &upstream)?))
    });
    let mut total = 0.0;
    let mut grads: Option<Vec<Vec<f32>>> = None;
    for r in per_sample {
        let (l, g) = r?;
        total += l;
        match grads.as_mut() {
            Some(acc) => accumulate(acc, &g),
            None => grads = Some(g),
        }
    }
    if !total.is_finite() {
        let rewards: Vec<f64> = batch.iter().map(|t| t.reward).collect();
        return Err(Error::non_finite(
            "policy loss",
            format!("loss {total}, rewards {rewards:?}"),
        ));
    }
    let grads = grads.unwrap_or_default();
    adam.step(&mut predictor.params_mut(), &grads)?;
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ebrrl::replay::DIGEST_LEN;
    use crate::nets::PredictorConfig;

    fn batch(reward: f64, n: usize) -> Vec<Transition> {
        (0..n)
            .map(|i| Transition {
                state: [0.0; DIGEST_LEN],
                action: [3.0, 0.8, 0.3, 0.9, 0.7, 0.2, 0.6],
                reward,
                next_state: [0.0; DIGEST_LEN],
                terminal: false,
                sample: i % 2,
            })
            .collect()
    }

    fn images() -> Vec<Image> {
        vec![
            Image::filled(16, 16, [200.0, 30.0, 90.0]),
            Image::filled(16, 16, [10.0, 140.0, 250.0]),
        ]
    }

    #[test]
    fn zero_reward_zero_loss() {
        let mut p = Predictor::new(PredictorConfig::default(), 0);
        let before = p.clone();
        let mut adam = AdamState::new(0.001);
        let loss = policy_update(&mut p, &mut adam, &batch(0.0, 4), &images(), 0.6).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(p, before);
    }

    #[test]
    fn loss_falls_on_fixed_batch() {
        let mut p = Predictor::new(PredictorConfig::default(), 0);
        let mut adam = AdamState::new(0.001);
        let b = batch(0.7, 8);
        let imgs = images();
        let losses: Vec<f64> = (0..100)
            .map(|_| policy_update(&mut p, &mut adam, &b, &imgs, 0.6).unwrap())
            .collect();
        assert!(
            losses[99] < 0.5 * losses[0],
            "{} -> {}",
            losses[0],
            losses[99]
        );
        let tail_trend = losses.windows(10).step_by(10).all(|w| w[9] <= w[0]);
        assert!(tail_trend);
    }

    #[test]
    fn weights_bootstrap() {
        let mut b = batch(0.5, 2);
        b[1].reward = 0.1;
        b[1].terminal = true;
        let w = regression_weights(&b, 0.6);
        assert!((w[0] - (0.5 + 0.6 * 0.3)).abs() < 1e-12);
        assert_eq!(w[1], 0.1);
    }
}
