//! Convolution, pooling and dense layers with hand-written backward passes.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::FeatureMap;

/// `c = a * b` for row-major `m x k` and `k x n` operands with explicit
/// strides. `accumulate` adds into `c` instead of overwriting it.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (isize, isize),
    b: &[f32],
    (rsb, csb): (isize, isize),
    c: &mut [f32],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    debug_assert!(c.len() >= m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: every operand slice covers the index range implied by its
    // dimensions and strides; the callers below construct them that way.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// 2-D cross-correlation layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// `out_ch x in_ch x kernel x kernel`, row-major.
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

/// Gradients produced by [`Conv2d::backward`].
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: FeatureMap,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Conv2d {
    pub fn zeros(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            kernel,
            stride: stride.max(1),
            pad,
            weight: vec![0.0; out_ch * in_ch * kernel * kernel],
            bias: vec![0.0; out_ch],
        }
    }

    /// He-normal initialisation, zero bias.
    pub fn init(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut layer = Self::zeros(in_ch, out_ch, kernel, stride, pad);
        let std = (2.0 / (in_ch * kernel * kernel).max(1) as f32).sqrt();
        for w in &mut layer.weight {
            *w = std * rng.sample::<f32, _>(StandardNormal);
        }
        layer
    }

    pub fn fan_in(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    /// `floor((in + 2 pad - k) / stride) + 1`, or an error when the kernel
    /// does not fit.
    pub fn output_size(&self, rows: usize, cols: usize) -> Result<(usize, usize)> {
        let (pr, pc) = (rows + 2 * self.pad, cols + 2 * self.pad);
        if self.kernel == 0 || pr < self.kernel || pc < self.kernel {
            return Err(Error::shape(
                format!("kernel {}", self.kernel),
                format!("padded input {pr}x{pc}"),
            ));
        }
        Ok((
            (pr - self.kernel) / self.stride + 1,
            (pc - self.kernel) / self.stride + 1,
        ))
    }

    fn check_input(&self, x: &FeatureMap) -> Result<(usize, usize)> {
        if x.channels() != self.in_ch {
            return Err(Error::shape(
                format!("{} input channels", self.in_ch),
                x.shape(),
            ));
        }
        self.output_size(x.rows(), x.cols())
    }

    /// Unrolls the receptive fields into a `fan_in x (out_rows * out_cols)`
    /// matrix.
    pub(crate) fn im2col(&self, x: &FeatureMap, orows: usize, ocols: usize) -> Vec<f32> {
        let (rows, cols) = (x.rows() as isize, x.cols() as isize);
        let n = orows * ocols;
        let k = self.kernel;
        let mut out = vec![0.0f32; self.fan_in() * n];
        for c in 0..self.in_ch {
            let plane = x.channel(c);
            for ki in 0..k {
                for kj in 0..k {
                    let row = ((c * k + ki) * k + kj) * n;
                    let dst = &mut out[row..row + n];
                    for oi in 0..orows {
                        let r = (oi * self.stride + ki) as isize - self.pad as isize;
                        if r < 0 || r >= rows {
                            continue;
                        }
                        let src =
                            &plane[r as usize * cols as usize..(r as usize + 1) * cols as usize];
                        let drow = &mut dst[oi * ocols..(oi + 1) * ocols];
                        for (oj, d) in drow.iter_mut().enumerate() {
                            let cc = (oj * self.stride + kj) as isize - self.pad as isize;
                            if cc >= 0 && cc < cols {
                                *d = src[cc as usize];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn col2im(
        &self,
        colsm: &[f32],
        rows: usize,
        cols: usize,
        orows: usize,
        ocols: usize,
    ) -> FeatureMap {
        let n = orows * ocols;
        let k = self.kernel;
        let mut out = FeatureMap::zeros(self.in_ch, rows, cols);
        for c in 0..self.in_ch {
            let plane = out.channel_mut(c);
            for ki in 0..k {
                for kj in 0..k {
                    let row = ((c * k + ki) * k + kj) * n;
                    let src = &colsm[row..row + n];
                    for oi in 0..orows {
                        let r = (oi * self.stride + ki) as isize - self.pad as isize;
                        if r < 0 || r >= rows as isize {
                            continue;
                        }
                        let dst = &mut plane[r as usize * cols..(r as usize + 1) * cols];
                        for oj in 0..ocols {
                            let cc = (oj * self.stride + kj) as isize - self.pad as isize;
                            if cc >= 0 && cc < cols as isize {
                                dst[cc as usize] += src[oi * ocols + oj];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn forward(&self, x: &FeatureMap) -> Result<FeatureMap> {
        Ok(self.forward_cached(x)?.0)
    }

    /// Forward pass that also returns the unrolled input for reuse in
    /// [`Conv2d::backward_cached`].
    pub(crate) fn forward_cached(&self, x: &FeatureMap) -> Result<(FeatureMap, Vec<f32>)> {
        let (orows, ocols) = self.check_input(x)?;
        let n = orows * ocols;
        let cols = self.im2col(x, orows, ocols);
        let mut out = vec![0.0f32; self.out_ch * n];
        for (o, chunk) in out.chunks_exact_mut(n).enumerate() {
            chunk.iter_mut().for_each(|v| *v = self.bias[o]);
        }
        let k = self.fan_in();
        gemm(
            self.out_ch,
            k,
            n,
            &self.weight,
            (k as isize, 1),
            &cols,
            (n as isize, 1),
            &mut out,
            true,
        );
        Ok((FeatureMap::from_vec(self.out_ch, orows, ocols, out)?, cols))
    }

    pub fn backward(&self, x: &FeatureMap, upstream: &FeatureMap) -> Result<ConvGrads> {
        let (orows, ocols) = self.check_input(x)?;
        let cols = self.im2col(x, orows, ocols);
        self.backward_cached(x.shape(), &cols, upstream)
    }

    pub(crate) fn backward_cached(
        &self,
        in_shape: (usize, usize, usize),
        cols: &[f32],
        upstream: &FeatureMap,
    ) -> Result<ConvGrads> {
        let (_, rows, icols) = in_shape;
        let (orows, ocols) = self.output_size(rows, icols)?;
        if upstream.shape() != (self.out_ch, orows, ocols) {
            return Err(Error::shape((self.out_ch, orows, ocols), upstream.shape()));
        }
        let n = orows * ocols;
        let k = self.fan_in();
        let up = upstream.data();

        let bias: Vec<f32> = up.chunks_exact(n).map(|c| c.iter().sum()).collect();

        // dW = up (O x N) * cols^T (N x K)
        let mut weight = vec![0.0f32; self.out_ch * k];
        gemm(
            self.out_ch,
            n,
            k,
            up,
            (n as isize, 1),
            cols,
            (1, n as isize),
            &mut weight,
            false,
        );

        // dcols = W^T (K x O) * up (O x N)
        let mut dcols = vec![0.0f32; k * n];
        gemm(
            k,
            self.out_ch,
            n,
            &self.weight,
            (1, k as isize),
            up,
            (n as isize, 1),
            &mut dcols,
            false,
        );
        let input = self.col2im(&dcols, rows, icols, orows, ocols);
        Ok(ConvGrads {
            input,
            weight,
            bias,
        })
    }
}

/// Pooling flavour.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Avg,
    Max,
}

/// Result of [`pool_forward`]: output plus the per-output argmax (max mode)
/// needed by the backward pass.
#[derive(Debug, Clone)]
pub struct Pooled {
    pub output: FeatureMap,
    pub argmax: Vec<u32>,
}

fn pool_dims(x: &FeatureMap, k: usize, stride: usize) -> Result<(usize, usize)> {
    if k == 0 || stride == 0 || k > x.rows() || k > x.cols() {
        return Err(Error::shape(
            format!("pool kernel {k} stride {stride}"),
            x.shape(),
        ));
    }
    Ok(((x.rows() - k) / stride + 1, (x.cols() - k) / stride + 1))
}

/// Window pooling with no padding. Max ties resolve to the first row-major
/// position in the window.
pub fn pool_forward(x: &FeatureMap, mode: PoolMode, k: usize, stride: usize) -> Result<Pooled> {
    let (orows, ocols) = pool_dims(x, k, stride)?;
    let cols = x.cols();
    let mut out = Vec::with_capacity(x.channels() * orows * ocols);
    let mut argmax = Vec::new();
    let inv = 1.0 / (k * k) as f32;
    for c in 0..x.channels() {
        let plane = x.channel(c);
        for oi in 0..orows {
            for oj in 0..ocols {
                let (r0, c0) = (oi * stride, oj * stride);
                match mode {
                    PoolMode::Max => {
                        let mut best = r0 * cols + c0;
                        for r in r0..r0 + k {
                            for cc in c0..c0 + k {
                                let i = r * cols + cc;
                                if plane[i] > plane[best] {
                                    best = i;
                                }
                            }
                        }
                        out.push(plane[best]);
                        argmax.push(best as u32);
                    }
                    PoolMode::Avg => {
                        let mut s = 0.0f32;
                        for r in r0..r0 + k {
                            s += plane[r * cols + c0..r * cols + c0 + k].iter().sum::<f32>();
                        }
                        out.push(s * inv);
                    }
                }
            }
        }
    }
    Ok(Pooled {
        output: FeatureMap::from_vec(x.channels(), orows, ocols, out)?,
        argmax,
    })
}

/// Gradient of [`pool_forward`] with respect to its input.
pub fn pool_backward(
    in_shape: (usize, usize, usize),
    pooled: &Pooled,
    upstream: &FeatureMap,
    mode: PoolMode,
    k: usize,
    stride: usize,
) -> Result<FeatureMap> {
    if upstream.shape() != pooled.output.shape() {
        return Err(Error::shape(pooled.output.shape(), upstream.shape()));
    }
    let (ch, rows, cols) = in_shape;
    let (_, orows, ocols) = upstream.shape();
    let mut grad = FeatureMap::zeros(ch, rows, cols);
    let per = orows * ocols;
    let inv = 1.0 / (k * k) as f32;
    for c in 0..ch {
        let up = upstream.channel(c);
        let plane = grad.channel_mut(c);
        match mode {
            PoolMode::Max => {
                for (i, &g) in up.iter().enumerate() {
                    plane[pooled.argmax[c * per + i] as usize] += g;
                }
            }
            PoolMode::Avg => {
                for oi in 0..orows {
                    for oj in 0..ocols {
                        let g = up[oi * ocols + oj] * inv;
                        for r in oi * stride..oi * stride + k {
                            for cc in oj * stride..oj * stride + k {
                                plane[r * cols + cc] += g;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(grad)
}

/// Fully connected layer over a flattened input.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// `outputs x inputs`, row-major.
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub input: Vec<f32>,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Glorot-normal initialisation scaled by `gain`.
    pub fn init(inputs: usize, outputs: usize, gain: f32, rng: &mut impl Rng) -> Self {
        let mut layer = Self::zeros(inputs, outputs);
        let std = gain * (2.0 / (inputs + outputs).max(1) as f32).sqrt();
        for w in &mut layer.weight {
            *w = std * rng.sample::<f32, _>(StandardNormal);
        }
        layer
    }

    pub fn forward(&self, x: &[f32]) -> Result<Vec<f32>> {
        if x.len() != self.inputs {
            return Err(Error::shape(self.inputs, x.len()));
        }
        Ok(self
            .weight
            .chunks_exact(self.inputs.max(1))
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f32>())
            .take(self.outputs)
            .collect())
    }

    pub fn backward(&self, x: &[f32], upstream: &[f32]) -> Result<DenseGrads> {
        if x.len() != self.inputs || upstream.len() != self.outputs {
            return Err(Error::shape(
                (self.inputs, self.outputs),
                (x.len(), upstream.len()),
            ));
        }
        let mut input = vec![0.0f32; self.inputs];
        let mut weight = vec![0.0f32; self.weight.len()];
        for (o, &g) in upstream.iter().enumerate() {
            let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
            let grow = &mut weight[o * self.inputs..(o + 1) * self.inputs];
            for i in 0..self.inputs {
                input[i] += row[i] * g;
                grow[i] = x[i] * g;
            }
        }
        Ok(DenseGrads {
            input,
            weight,
            bias: upstream.to_vec(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_kernel_is_identity() {
        let mut conv = Conv2d::zeros(1, 1, 1, 1, 0);
        conv.weight[0] = 1.0;
        let x = FeatureMap::from_fn(1, 4, 5, |_, r, k| (r * 5 + k) as f32 * 0.5);
        assert_eq!(conv.forward(&x).unwrap(), x);
    }

    #[test]
    fn ones_kernel_sums() {
        let mut conv = Conv2d::zeros(1, 1, 3, 1, 0);
        conv.weight.iter_mut().for_each(|w| *w = 1.0);
        let out = conv.forward(&FeatureMap::filled(1, 3, 3, 1.0)).unwrap();
        assert_eq!(out.shape(), (1, 1, 1));
        assert_eq!(out.data(), &[9.0]);
    }

    #[test]
    fn output_size_formula() {
        let conv = Conv2d::zeros(2, 3, 3, 2, 1);
        assert_eq!(
            conv.output_size(7, 8).unwrap(),
            ((7 + 2 - 3) / 2 + 1, (8 + 2 - 3) / 2 + 1)
        );
        assert!(Conv2d::zeros(1, 1, 5, 1, 0).output_size(3, 3).is_err());
        assert!(conv.forward(&FeatureMap::zeros(1, 7, 8)).is_err());
    }

    #[test]
    fn avg_pool_mean() {
        let x = FeatureMap::from_vec(1, 2, 2, vec![1., 2., 3., 4.]).unwrap();
        let p = pool_forward(&x, PoolMode::Avg, 2, 2).unwrap();
        assert_eq!(p.output.data(), &[2.5]);
    }

    #[test]
    fn max_pool_constant_and_ties() {
        let x = FeatureMap::filled(2, 4, 4, 3.0);
        let p = pool_forward(&x, PoolMode::Max, 2, 2).unwrap();
        assert!(p.output.data().iter().all(|&v| v == 3.0));
        let g = pool_backward(
            x.shape(),
            &p,
            &FeatureMap::filled(2, 2, 2, 1.0),
            PoolMode::Max,
            2,
            2,
        )
        .unwrap();
        // First row-major position of each window receives the gradient.
        assert_eq!(g.get(0, 0, 0), 1.0);
        assert_eq!(g.get(0, 0, 1), 0.0);
        assert_eq!(g.get(0, 1, 0), 0.0);
        assert_eq!(g.get(1, 2, 2), 1.0);
    }

    #[test]
    fn pool_too_large() {
        assert!(pool_forward(&FeatureMap::zeros(1, 2, 2), PoolMode::Max, 3, 1).is_err());
    }

    #[test]
    fn dense_forward_backward_shapes() {
        let mut d = Dense::zeros(3, 2);
        d.weight = vec![1., 2., 3., 4., 5., 6.];
        d.bias = vec![0.5, -0.5];
        assert_eq!(d.forward(&[1., 1., 1.]).unwrap(), vec![6.5, 14.5]);
        let g = d.backward(&[1., 2., 3.], &[1., 0.]).unwrap();
        assert_eq!(g.input, vec![1., 2., 3.]);
        assert_eq!(g.weight, vec![1., 2., 3., 0., 0., 0.]);
        assert!(d.forward(&[1.0]).is_err());
    }
}
