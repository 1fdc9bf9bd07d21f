//! Gradient-check cases. Each returns the norm-wise relative error between
//! the analytic backward pass and central differences.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use spiralx::nets::layers::{pool_backward, pool_forward};
use spiralx::nets::loss::iou_loss;
use spiralx::nets::{CenterBox, Conv2d, Dense, PoolMode};
use spiralx::spiral::{spiral_pool_backward_with, spiral_pool_with, FusionMode};
use spiralx::FeatureMap;

use super::{
    normal_map, normal_vec, numeric_grad, relative_error, rng, separated_map, weighted_sum,
};

pub const H: f32 = 1e-3;

pub fn as_map(w: &[f64], shape: (usize, usize, usize)) -> FeatureMap {
    FeatureMap::from_vec(
        shape.0,
        shape.1,
        shape.2,
        w.iter().map(|v| *v as f32).collect(),
    )
    .unwrap()
}

/// Loss weights drawn in f32, so the analytic pass sees exactly the
/// upstream the f64 loss uses.
pub fn loss_weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    normal_vec(rng, n).into_iter().map(f64::from).collect()
}

/// Random 2x8x8 input.
pub fn spiral(mode: FusionMode, seed: u64) -> f64 {
    let mut r = rng(seed);
    let x = normal_map(&mut r, 2, 8, 8);
    let w = loss_weights(&mut r, 4 * 64);
    let analytic = spiral_pool_backward_with(&x, &as_map(&w, (4, 8, 8)), mode).unwrap();
    let numeric = numeric_grad(x.data(), H, |v| {
        let m = FeatureMap::from_vec(2, 8, 8, v.to_vec()).unwrap();
        weighted_sum(spiral_pool_with(&m, mode).unwrap().data(), &w)
    });
    relative_error(analytic.data(), &numeric)
}

/// Worst of the input, weight and bias errors.
pub fn conv(seed: u64) -> f64 {
    let mut r = rng(seed);
    let stride = 1 + (seed as usize % 2);
    let pad = seed as usize % 2;
    let mut conv = Conv2d::init(3, 4, 3, stride, pad, &mut r);
    for b in &mut conv.bias {
        *b = r.random_range(-0.5..0.5);
    }
    let x = normal_map(&mut r, 3, 7, 6);
    let (orows, ocols) = conv.output_size(7, 6).unwrap();
    let w = loss_weights(&mut r, 4 * orows * ocols);
    let g = conv.backward(&x, &as_map(&w, (4, orows, ocols))).unwrap();

    let dx = numeric_grad(x.data(), H, |v| {
        let m = FeatureMap::from_vec(3, 7, 6, v.to_vec()).unwrap();
        weighted_sum(conv.forward(&m).unwrap().data(), &w)
    });
    let dw = numeric_grad(&conv.weight, H, |v| {
        let c = Conv2d {
            weight: v.to_vec(),
            ..conv.clone()
        };
        weighted_sum(c.forward(&x).unwrap().data(), &w)
    });
    let db = numeric_grad(&conv.bias, H, |v| {
        let c = Conv2d {
            bias: v.to_vec(),
            ..conv.clone()
        };
        weighted_sum(c.forward(&x).unwrap().data(), &w)
    });
    relative_error(g.input.data(), &dx)
        .max(relative_error(&g.weight, &dw))
        .max(relative_error(&g.bias, &db))
}

/// Inputs are spaced so that a max-pool winner cannot change under the
/// finite-difference step.
pub fn pool(mode: PoolMode, seed: u64) -> f64 {
    let mut r = rng(seed);
    let (k, stride) = if seed.is_multiple_of(2) {
        (2, 2)
    } else {
        (3, 1)
    };
    let x = separated_map(&mut r, 2, 6, 6);
    let pooled = pool_forward(&x, mode, k, stride).unwrap();
    let shape = pooled.output.shape();
    let w = loss_weights(&mut r, pooled.output.len());
    let a = pool_backward(x.shape(), &pooled, &as_map(&w, shape), mode, k, stride).unwrap();
    let n = numeric_grad(x.data(), H, |v| {
        let m = FeatureMap::from_vec(2, 6, 6, v.to_vec()).unwrap();
        weighted_sum(pool_forward(&m, mode, k, stride).unwrap().output.data(), &w)
    });
    relative_error(a.data(), &n)
}

/// Worst of the input and weight errors; the bias gradient must equal the
/// upstream exactly.
pub fn dense(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut layer = Dense::init(12, 5, 1.0, &mut r);
    layer.bias = normal_vec(&mut r, 5);
    let x = normal_vec(&mut r, 12);
    let w = loss_weights(&mut r, 5);
    let up: Vec<f32> = w.iter().map(|v| *v as f32).collect();
    let g = layer.backward(&x, &up).unwrap();
    assert_eq!(g.bias, up);
    let dx = numeric_grad(&x, H, |v| weighted_sum(&layer.forward(v).unwrap(), &w));
    let dw = numeric_grad(&layer.weight, H, |v| {
        let l = Dense {
            weight: v.to_vec(),
            ..layer.clone()
        };
        weighted_sum(&l.forward(&x).unwrap(), &w)
    });
    relative_error(&g.input, &dx).max(relative_error(&g.weight, &dw))
}

/// Overlapping box pairs whose corners stay clear of each other by more
/// than the step, so the loss is smooth around the sample point.
pub fn iou(seed: u64) -> f64 {
    let mut r = rng(seed);
    loop {
        let gt = CenterBox {
            cx: r.random_range(0.3..0.7),
            cy: r.random_range(0.3..0.7),
            w: r.random_range(0.1..0.4),
            h: r.random_range(0.1..0.4),
        };
        let pred = CenterBox {
            cx: gt.cx + r.random_range(-0.1..0.1),
            cy: gt.cy + r.random_range(-0.1..0.1),
            w: gt.w * r.random_range(0.6..1.5),
            h: gt.h * r.random_range(0.6..1.5),
        };
        let (p, g) = (pred.corners(), gt.corners());
        if (0..4).any(|i| (p[i] - g[i]).abs() < 4.0 * H) {
            continue;
        }
        let (loss, grad) = iou_loss(&pred, &gt).unwrap();
        assert!(loss < 1.0, "boxes must overlap");
        let v = [pred.cx, pred.cy, pred.w, pred.h];
        let n = numeric_grad(&v, H, |q| {
            let b = CenterBox {
                cx: q[0],
                cy: q[1],
                w: q[2],
                h: q[3],
            };
            iou_loss(&b, &gt).unwrap().0 as f64
        });
        return relative_error(&grad, &n);
    }
}
