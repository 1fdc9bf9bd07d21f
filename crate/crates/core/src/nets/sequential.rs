//! A straight chain of layers with a per-sample tape for backprop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{pool_backward, pool_forward, Conv2d, Dense, PoolMode, Pooled};
use crate::error::{Error, Result};
use crate::spiral::{spiral_pool_backward_with, spiral_pool_with, FusionMode};
use crate::tensor::FeatureMap;

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(Conv2d),
    Relu,
    Pool {
        mode: PoolMode,
        kernel: usize,
        stride: usize,
    },
    Spiral(FusionMode),
    /// Inverted dropout with the given drop probability; inactive in eval.
    Dropout(f32),
    GlobalAvgPool,
    Dense(Dense),
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::Relu => "relu",
            Layer::Pool {
                mode: PoolMode::Max,
                ..
            } => "maxpool",
            Layer::Pool {
                mode: PoolMode::Avg,
                ..
            } => "avgpool",
            Layer::Spiral(_) => "spiral",
            Layer::Dropout(_) => "dropout",
            Layer::GlobalAvgPool => "gap",
            Layer::Dense(_) => "dense",
        }
    }
}

/// Forward-pass mode. Training enables dropout with a per-call seed so that
/// per-sample passes are reproducible in any execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { seed: u64 },
}

#[derive(Debug, Clone)]
enum Cache {
    Conv {
        shape: (usize, usize, usize),
        cols: Vec<f32>,
    },
    Relu {
        output: FeatureMap,
    },
    Pool {
        shape: (usize, usize, usize),
        pooled: Pooled,
    },
    Spiral {
        input: FeatureMap,
    },
    Dropout {
        mask: Option<Vec<f32>>,
    },
    Gap {
        shape: (usize, usize, usize),
    },
    Dense {
        input: Vec<f32>,
    },
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    caches: Vec<Cache>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn forward(&self, x: &FeatureMap, mode: Mode) -> Result<FeatureMap> {
        Ok(self.forward_taped(x, mode)?.0)
    }

    pub fn forward_taped(&self, x: &FeatureMap, mode: Mode) -> Result<(FeatureMap, Tape)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for (li, layer) in self.layers.iter().enumerate() {
            let (next, cache) = match layer {
                Layer::Conv(conv) => {
                    let shape = cur.shape();
                    let (out, cols) = conv.forward_cached(&cur)?;
                    (out, Cache::Conv { shape, cols })
                }
                Layer::Relu => {
                    let out = cur.map(|v| v.max(0.0));
                    (out.clone(), Cache::Relu { output: out })
                }
                Layer::Pool {
                    mode: pm,
                    kernel,
                    stride,
                } => {
                    let shape = cur.shape();
                    let pooled = pool_forward(&cur, *pm, *kernel, *stride)?;
                    (pooled.output.clone(), Cache::Pool { shape, pooled })
                }
                Layer::Spiral(fm) => {
                    let out = spiral_pool_with(&cur, *fm)?;
                    (out, Cache::Spiral { input: cur })
                }
                Layer::Dropout(p) => match mode {
                    Mode::Train { seed } if *p > 0.0 => {
                        let mut rng = ChaCha8Rng::seed_from_u64(
                            seed ^ (li as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                        );
                        let keep = 1.0 - p;
                        let mask: Vec<f32> = (0..cur.len())
                            .map(|_| {
                                if rng.random::<f32>() < keep {
                                    1.0 / keep
                                } else {
                                    0.0
                                }
                            })
                            .collect();
                        let mut out = cur;
                        out.data_mut()
                            .iter_mut()
                            .zip(&mask)
                            .for_each(|(v, m)| *v *= m);
                        (out, Cache::Dropout { mask: Some(mask) })
                    }
                    _ => (cur, Cache::Dropout { mask: None }),
                },
                Layer::GlobalAvgPool => {
                    let shape = cur.shape();
                    let n = cur.plane_len().max(1) as f32;
                    let means: Vec<f32> = (0..cur.channels())
                        .map(|c| cur.channel(c).iter().sum::<f32>() / n)
                        .collect();
                    (
                        FeatureMap::from_vec(shape.0, 1, 1, means)?,
                        Cache::Gap { shape },
                    )
                }
                Layer::Dense(d) => {
                    let input = cur.into_vec();
                    let out = d.forward(&input)?;
                    (
                        FeatureMap::from_vec(d.outputs, 1, 1, out)?,
                        Cache::Dense { input },
                    )
                }
            };
            caches.push(cache);
            cur = next;
        }
        Ok((cur, Tape { caches }))
    }

    /// Backpropagates `upstream` through the taped pass. Returns the input
    /// gradient and parameter gradients in [`Sequential::params`] order.
    pub fn backward(
        &self,
        tape: &Tape,
        upstream: FeatureMap,
    ) -> Result<(FeatureMap, Vec<Vec<f32>>)> {
        if tape.caches.len() != self.layers.len() {
            return Err(Error::shape(self.layers.len(), tape.caches.len()));
        }
        let mut grads_rev: Vec<Vec<f32>> = Vec::new();
        let mut g = upstream;
        for (layer, cache) in self.layers.iter().zip(&tape.caches).rev() {
            g = match (layer, cache) {
                (Layer::Conv(conv), Cache::Conv { shape, cols }) => {
                    let cg = conv.backward_cached(*shape, cols, &g)?;
                    grads_rev.push(cg.bias);
                    grads_rev.push(cg.weight);
                    cg.input
                }
                (Layer::Relu, Cache::Relu { output }) => {
                    let mut g = g;
                    g.data_mut()
                        .iter_mut()
                        .zip(output.data())
                        .for_each(|(gv, o)| {
                            if *o <= 0.0 {
                                *gv = 0.0
                            }
                        });
                    g
                }
                (
                    Layer::Pool {
                        mode,
                        kernel,
                        stride,
                    },
                    Cache::Pool { shape, pooled },
                ) => pool_backward(*shape, pooled, &g, *mode, *kernel, *stride)?,
                (Layer::Spiral(fm), Cache::Spiral { input }) => {
                    spiral_pool_backward_with(input, &g, *fm)?
                }
                (Layer::Dropout(_), Cache::Dropout { mask }) => {
                    let mut g = g;
                    if let Some(mask) = mask {
                        g.data_mut().iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
                    }
                    g
                }
                (Layer::GlobalAvgPool, Cache::Gap { shape }) => {
                    let (c, r, k) = *shape;
                    let n = (r * k).max(1) as f32;
                    FeatureMap::from_fn(c, r, k, |ci, _, _| g.data()[ci] / n)
                }
                (Layer::Dense(d), Cache::Dense { input }) => {
                    let dg = d.backward(input, g.data())?;
                    grads_rev.push(dg.bias);
                    grads_rev.push(dg.weight);
                    FeatureMap::from_vec(dg.input.len(), 1, 1, dg.input)?
                }
                _ => return Err(Error::domain("tape does not match network")),
            };
        }
        grads_rev.reverse();
        Ok((g, grads_rev))
    }

    /// Parameter tensors, each layer contributing `weight` then `bias`.
    pub fn params(&self) -> Vec<&[f32]> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => {
                    out.push(c.weight.as_slice());
                    out.push(c.bias.as_slice());
                }
                Layer::Dense(d) => {
                    out.push(d.weight.as_slice());
                    out.push(d.bias.as_slice());
                }
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f32>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => {
                    out.push(&mut c.weight);
                    out.push(&mut c.bias);
                }
                Layer::Dense(d) => {
                    out.push(&mut d.weight);
                    out.push(&mut d.bias);
                }
                _ => {}
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Output shape for an input shape, without running the network.
    pub fn output_shape(&self, input: (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        let (mut c, mut r, mut k) = input;
        for layer in &self.layers {
            match layer {
                Layer::Conv(conv) => {
                    if conv.in_ch != c {
                        return Err(Error::shape(conv.in_ch, c));
                    }
                    let (nr, nk) = conv.output_size(r, k)?;
                    (c, r, k) = (conv.out_ch, nr, nk);
                }
                Layer::Pool { kernel, stride, .. } => {
                    if *kernel > r || *kernel > k {
                        return Err(Error::shape(kernel, (r, k)));
                    }
                    (r, k) = ((r - kernel) / stride + 1, (k - kernel) / stride + 1);
                }
                Layer::Spiral(_) => c *= 2,
                Layer::GlobalAvgPool => (r, k) = (1, 1),
                Layer::Dense(d) => {
                    if d.inputs != c * r * k {
                        return Err(Error::shape(d.inputs, c * r * k));
                    }
                    (c, r, k) = (d.outputs, 1, 1);
                }
                Layer::Relu | Layer::Dropout(_) => {}
            }
        }
        Ok((c, r, k))
    }
}

/// Adds `src` into `dst` tensor by tensor.
pub fn accumulate(dst: &mut [Vec<f32>], src: &[Vec<f32>]) {
    for (d, s) in dst.iter_mut().zip(src) {
        for (a, b) in d.iter_mut().zip(s) {
            *a += b;
        }
    }
}
