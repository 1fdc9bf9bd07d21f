//! Spiral pooling.
//!
//! A pooled feature map is read in clockwise spiral order (first row left to
//! right, last column downward, last row right to left, first column upward,
//! then the same on the inner sub-grid) and the resulting sequence is written
//! back row-major. The rearranged map is fused element-wise with the pooled
//! map and the fused map is stacked on top of the pooled map along the
//! channel axis:
//!
//! ```text
//! SPF = (spiral(F) (x) F) ++ F        channels: C -> 2C
//! ```
//!
//! On `[[1,2,3],[4,5,6],[7,8,9]]` the spiral read is `1,2,3,6,9,8,7,4,5`, so
//! the rearranged map is `[[1,2,3],[6,9,8],[7,4,5]]`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};
use crate::tensor::{channel_concat, elementwise_add, elementwise_mul, FeatureMap};

/// Clockwise spiral visiting order over a `rows x cols` grid.
///
/// `order[i]` is the `(row, col)` cell read at step `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpiralPermutation {
    rows: usize,
    cols: usize,
    order: Vec<(u32, u32)>,
}

impl SpiralPermutation {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn order(&self) -> &[(u32, u32)] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Row-major offset of the cell read at step `i`.
    #[inline]
    pub fn source(&self, i: usize) -> usize {
        let (r, c) = self.order[i];
        r as usize * self.cols + c as usize
    }

    /// True when every cell of the grid appears exactly once.
    pub fn is_bijection(&self) -> bool {
        if self.order.len() != self.rows * self.cols {
            return false;
        }
        let mut seen = vec![false; self.order.len()];
        for &(r, c) in &self.order {
            let (r, c) = (r as usize, c as usize);
            if r >= self.rows || c >= self.cols || seen[r * self.cols + c] {
                return false;
            }
            seen[r * self.cols + c] = true;
        }
        true
    }
}

/// Builds the clockwise spiral order by peeling the grid layer by layer.
///
/// Runs in `O(rows * cols)` time; apart from the returned order it keeps four
/// boundary counters.
pub fn spiral_order(rows: usize, cols: usize) -> Result<SpiralPermutation> {
    if rows == 0 || cols == 0 {
        return Err(Error::domain(format!(
            "spiral order needs a non-empty grid, got {rows}x{cols}"
        )));
    }
    if rows > u32::MAX as usize || cols > u32::MAX as usize {
        return Err(Error::domain("grid too large for spiral order"));
    }
    let mut order = Vec::with_capacity(rows * cols);
    let (mut top, mut bottom) = (0isize, rows as isize - 1);
    let (mut left, mut right) = (0isize, cols as isize - 1);
    while top <= bottom && left <= right {
        for k in left..=right {
            order.push((top as u32, k as u32));
        }
        top += 1;
        for r in top..=bottom {
            order.push((r as u32, right as u32));
        }
        right -= 1;
        if top <= bottom {
            for k in (left..=right).rev() {
                order.push((bottom as u32, k as u32));
            }
            bottom -= 1;
        }
        if left <= right {
            for r in (top..=bottom).rev() {
                order.push((r as u32, left as u32));
            }
            left += 1;
        }
    }
    Ok(SpiralPermutation { rows, cols, order })
}

/// Spiral-rearranges one `rows x cols` plane into `dst` by walking the
/// boundaries directly. Allocates nothing.
pub fn spiral_rearrange_plane_into(
    src: &[f32],
    rows: usize,
    cols: usize,
    dst: &mut [f32],
) -> Result<()> {
    if rows == 0 || cols == 0 {
        return Err(Error::domain(format!("empty {rows}x{cols} plane")));
    }
    if src.len() != rows * cols || dst.len() != rows * cols {
        return Err(Error::shape((rows, cols), (src.len(), dst.len())));
    }
    let mut i = 0;
    let mut emit = |r: isize, k: isize| {
        dst[i] = src[r as usize * cols + k as usize];
        i += 1;
    };
    let (mut top, mut bottom) = (0isize, rows as isize - 1);
    let (mut left, mut right) = (0isize, cols as isize - 1);
    while top <= bottom && left <= right {
        for k in left..=right {
            emit(top, k);
        }
        top += 1;
        for r in top..=bottom {
            emit(r, right);
        }
        right -= 1;
        if top <= bottom {
            for k in (left..=right).rev() {
                emit(bottom, k);
            }
            bottom -= 1;
        }
        if left <= right {
            for r in (top..=bottom).rev() {
                emit(r, left);
            }
            left += 1;
        }
    }
    Ok(())
}

type OrderCache = Mutex<HashMap<(usize, usize), Arc<SpiralPermutation>>>;

/// Shared, lazily built spiral orders keyed by grid shape.
pub fn cached_order(rows: usize, cols: usize) -> Result<Arc<SpiralPermutation>> {
    static CACHE: OnceLock<OrderCache> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(p) = cache.lock().expect("spiral cache").get(&(rows, cols)) {
        return Ok(Arc::clone(p));
    }
    let perm = Arc::new(spiral_order(rows, cols)?);
    cache
        .lock()
        .expect("spiral cache")
        .entry((rows, cols))
        .or_insert_with(|| Arc::clone(&perm));
    Ok(perm)
}

/// How the rearranged map is fused with the pooled map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FusionMode {
    /// Hadamard product.
    #[default]
    Multiply,
    /// Element-wise sum, kept for ablations.
    Add,
}

impl std::str::FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mul" | "multiply" => Ok(FusionMode::Multiply),
            "add" => Ok(FusionMode::Add),
            other => Err(Error::Config(format!("unknown fusion mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FusionMode::Multiply => "mul",
            FusionMode::Add => "add",
        })
    }
}

/// Reads every channel in spiral order and writes the sequence back row-major.
pub fn spiral_rearrange(f: &FeatureMap) -> Result<FeatureMap> {
    if f.is_empty() {
        return Ok(f.clone());
    }
    let perm = cached_order(f.rows(), f.cols())?;
    Ok(rearrange_with(f, &perm))
}

pub(crate) fn rearrange_with(f: &FeatureMap, perm: &SpiralPermutation) -> FeatureMap {
    let n = f.plane_len();
    let mut out = vec![0.0f32; f.len()];
    for (dst, src) in out.chunks_exact_mut(n).zip(f.data().chunks_exact(n)) {
        for (i, d) in dst.iter_mut().enumerate() {
            *d = src[perm.source(i)];
        }
    }
    FeatureMap::from_vec(f.channels(), f.rows(), f.cols(), out).expect("shape preserved")
}

/// Transpose of [`spiral_rearrange`]: scatters each row-major value back to
/// the cell it was read from.
pub(crate) fn rearrange_transpose(g: &FeatureMap, perm: &SpiralPermutation) -> FeatureMap {
    let n = g.plane_len();
    let mut out = vec![0.0f32; g.len()];
    for (dst, src) in out.chunks_exact_mut(n).zip(g.data().chunks_exact(n)) {
        for (i, v) in src.iter().enumerate() {
            dst[perm.source(i)] = *v;
        }
    }
    FeatureMap::from_vec(g.channels(), g.rows(), g.cols(), out).expect("shape preserved")
}

/// Fuses the spiral map with the pooled map (Hadamard product).
pub fn spiral_fuse(sf: &FeatureMap, f: &FeatureMap) -> Result<FeatureMap> {
    spiral_fuse_with(sf, f, FusionMode::Multiply)
}

pub fn spiral_fuse_with(sf: &FeatureMap, f: &FeatureMap, mode: FusionMode) -> Result<FeatureMap> {
    match mode {
        FusionMode::Multiply => elementwise_mul(sf, f),
        FusionMode::Add => elementwise_add(sf, f),
    }
}

/// Full spiral pooling: `fuse(spiral(f), f) ++ f`, doubling the channels.
pub fn spiral_pool(f: &FeatureMap) -> Result<FeatureMap> {
    spiral_pool_with(f, FusionMode::Multiply)
}

pub fn spiral_pool_with(f: &FeatureMap, mode: FusionMode) -> Result<FeatureMap> {
    let sf = spiral_rearrange(f)?;
    let fused = spiral_fuse_with(&sf, f, mode)?;
    channel_concat(&fused, f)
}

/// Gradient of [`spiral_pool`] with respect to its input.
///
/// With `y = [S(f) * f ; f]` and upstream `g = [g0 ; g1]`:
/// `df = g1 + g0 * S(f) + S^T(g0 * f)`.
pub fn spiral_pool_backward(f: &FeatureMap, upstream: &FeatureMap) -> Result<FeatureMap> {
    spiral_pool_backward_with(f, upstream, FusionMode::Multiply)
}

pub fn spiral_pool_backward_with(
    f: &FeatureMap,
    upstream: &FeatureMap,
    mode: FusionMode,
) -> Result<FeatureMap> {
    let (c, r, k) = f.shape();
    if upstream.shape() != (2 * c, r, k) {
        return Err(Error::shape((2 * c, r, k), upstream.shape()));
    }
    if f.is_empty() {
        return Ok(f.clone());
    }
    let perm = cached_order(r, k)?;
    let g_fused = upstream.slice_channels(0, c)?;
    let mut grad = upstream.slice_channels(c, 2 * c)?;
    match mode {
        FusionMode::Multiply => {
            let sf = rearrange_with(f, &perm);
            let through_spiral = rearrange_transpose(&elementwise_mul(&g_fused, f)?, &perm);
            for ((g, (gf, s)), t) in grad
                .data_mut()
                .iter_mut()
                .zip(g_fused.data().iter().zip(sf.data()))
                .zip(through_spiral.data())
            {
                *g += gf * s + t;
            }
        }
        FusionMode::Add => {
            let through_spiral = rearrange_transpose(&g_fused, &perm);
            for ((g, gf), t) in grad
                .data_mut()
                .iter_mut()
                .zip(g_fused.data())
                .zip(through_spiral.data())
            {
                *g += gf + t;
            }
        }
    }
    Ok(grad)
}

/// Applies [`spiral_pool_with`] to a batch of maps.
pub fn spiral_pool_batch(maps: &[FeatureMap], mode: FusionMode) -> Result<Vec<FeatureMap>> {
    crate::par::map(maps, |m| spiral_pool_with(m, mode))
        .into_iter()
        .collect()
}
