//! Timing and allocation measurements of the spiral rearrangement.

use std::fmt::Write as _;
use std::hint::black_box;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::spiral::spiral_rearrange_plane_into;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub rows: usize,
    pub cols: usize,
    pub calls: u64,
    pub ns_per_call: f64,
    pub ns_per_element: f64,
    /// Bytes allocated inside one call, when a probe is available.
    pub alloc_bytes_per_call: Option<usize>,
}

/// Returns the process's cumulative allocated byte count.
pub type AllocProbe<'a> = &'a dyn Fn() -> usize;

/// Times the rearrangement of one plane per shape, repeating each for at
/// least `min_time` and keeping the fastest of three such windows.
pub fn spiral_bench(
    shapes: &[(usize, usize)],
    min_time: Duration,
    probe: Option<AllocProbe<'_>>,
) -> Result<Vec<BenchRow>> {
    let mut out = Vec::with_capacity(shapes.len());
    for &(rows, cols) in shapes {
        let n = rows * cols;
        let src: Vec<f32> = (0..n).map(|i| i as f32).collect();
        let mut dst = vec![0.0f32; n];
        spiral_rearrange_plane_into(&src, rows, cols, &mut dst)?;

        let alloc_bytes_per_call = probe.map(|p| {
            let before = p();
            spiral_rearrange_plane_into(black_box(&src), rows, cols, black_box(&mut dst))
                .expect("checked shape");
            p() - before
        });

        let mut best = f64::INFINITY;
        let mut calls_at_best = 0;
        for _ in 0..3 {
            let start = Instant::now();
            let mut calls = 0u64;
            while start.elapsed() < min_time || calls == 0 {
                spiral_rearrange_plane_into(black_box(&src), rows, cols, black_box(&mut dst))?;
                calls += 1;
            }
            let per = start.elapsed().as_nanos() as f64 / calls as f64;
            if per < best {
                best = per;
                calls_at_best = calls;
            }
        }
        out.push(BenchRow {
            rows,
            cols,
            calls: calls_at_best,
            ns_per_call: best,
            ns_per_element: best / n as f64,
            alloc_bytes_per_call,
        });
    }
    Ok(out)
}

pub const BENCH_HEADER: &str =
    "rows,cols,elements,calls,ns_per_call,ns_per_element,alloc_bytes_per_call";

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from(BENCH_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{:.1},{:.4},{}",
            r.rows,
            r.cols,
            r.rows * r.cols,
            r.calls,
            r.ns_per_call,
            r.ns_per_element,
            r.alloc_bytes_per_call
                .map(|b| b.to_string())
                .unwrap_or_default()
        );
    }
    s
}

/// Time ratio between two shapes, `larger / smaller`.
pub fn time_ratio(rows: &[BenchRow], small: (usize, usize), large: (usize, usize)) -> Result<f64> {
    let find = |s: (usize, usize)| {
        rows.iter()
            .find(|r| (r.rows, r.cols) == s)
            .ok_or_else(|| Error::domain(format!("no benchmark row for {}x{}", s.0, s.1)))
    };
    Ok(find(large)?.ns_per_call / find(small)?.ns_per_call)
}

/// Checks the linear-time and O(cols)-space bounds: the 64x64 -> 128x128
/// time ratio lies in `[2, 8]` and no call allocates more than
/// `alloc_bytes_per_col * cols` bytes.
pub fn complexity_check(rows: &[BenchRow], alloc_bytes_per_col: usize) -> Result<(f64, bool)> {
    let ratio = time_ratio(rows, (64, 64), (128, 128))?;
    let alloc_ok = rows.iter().all(|r| {
        r.alloc_bytes_per_call
            .is_none_or(|b| b <= alloc_bytes_per_col * r.cols)
    });
    Ok((ratio, (2.0..=8.0).contains(&ratio) && alloc_ok))
}

/// Default shape sweep.
pub const DEFAULT_SHAPES: [(usize, usize); 6] =
    [(1, 1), (16, 16), (32, 32), (64, 64), (128, 128), (256, 256)];
