//! Image corruptions for robustness sweeps: Gaussian blur, illumination
//! change, additive Gaussian noise and a white fog veil.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, Image};

/// Conventional sigma for a kernel of size `k`.
pub fn blur_sigma(k: usize) -> f64 {
    0.3 * ((k as f64 - 1.0) * 0.5 - 1.0) + 0.8
}

/// Normalized 1-D Gaussian taps for size `k`, centered on index `k / 2`.
pub fn gaussian_kernel(k: usize) -> Vec<f64> {
    let sigma = blur_sigma(k);
    let anchor = (k / 2) as f64;
    let taps: Vec<f64> = (0..k)
        .map(|i| {
            let d = i as f64 - anchor;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

/// Mirror index into `0..n` without repeating the edge sample.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

/// Separable Gaussian blur with reflected borders.
pub fn gaussian_blur(img: &Image, k: usize) -> Result<Image> {
    if k == 0 {
        return Err(Error::domain("blur kernel size must be at least 1"));
    }
    if k > img.rows() || k > img.cols() {
        return Err(Error::domain(format!(
            "blur kernel {k} larger than {}x{} image",
            img.rows(),
            img.cols()
        )));
    }
    if k == 1 {
        return Ok(img.clone());
    }
    let taps = gaussian_kernel(k);
    let anchor = (k / 2) as isize;
    let (rows, cols) = (img.rows(), img.cols());
    let src = img.as_map();
    let mut tmp = vec![0.0f64; 3 * rows * cols];
    for c in 0..3 {
        let plane = src.channel(c);
        for r in 0..rows {
            for x in 0..cols {
                let mut acc = 0.0;
                for (t, w) in taps.iter().enumerate() {
                    let xi = reflect(x as isize + t as isize - anchor, cols);
                    acc += w * plane[r * cols + xi] as f64;
                }
                tmp[(c * rows + r) * cols + x] = acc;
            }
        }
    }
    let out = FeatureMap::from_fn(3, rows, cols, |c, r, x| {
        let mut acc = 0.0;
        for (t, w) in taps.iter().enumerate() {
            let ri = reflect(r as isize + t as isize - anchor, rows);
            acc += w * tmp[(c * rows + ri) * cols + x];
        }
        acc.clamp(0.0, 255.0) as f32
    });
    Image::from_map(out)
}

/// `clip(255 * incandescence * (in / 255) ^ luminescence)`.
pub fn illumination(img: &Image, incandescence: f64, luminescence: f64) -> Result<Image> {
    if !(incandescence > 0.0 && luminescence > 0.0) {
        return Err(Error::domain(format!(
            "illumination factors must be positive, got ({incandescence}, {luminescence})"
        )));
    }
    if incandescence == 1.0 && luminescence == 1.0 {
        return Ok(img.clone());
    }
    Ok(img.map_pixels(|p| {
        p.map(|v| {
            (255.0 * incandescence * (v as f64 / 255.0).powf(luminescence)).clamp(0.0, 255.0) as f32
        })
    }))
}

/// Pre-clip noisy values `in + N(mean, std)` in channel-major order.
pub fn gaussian_noise_unclipped(img: &Image, mean: f64, std: f64, seed: u64) -> Result<Vec<f64>> {
    let normal =
        Normal::new(mean, std).map_err(|e| Error::domain(format!("noise std {std}: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(img
        .as_map()
        .data()
        .iter()
        .map(|&v| v as f64 + normal.sample(&mut rng))
        .collect())
}

/// `clip(in + N(mean, std))`, reproducible under `seed`.
pub fn gaussian_noise(img: &Image, mean: f64, std: f64, seed: u64) -> Result<Image> {
    let noisy = gaussian_noise_unclipped(img, mean, std, seed)?;
    let (rows, cols) = (img.rows(), img.cols());
    let data = noisy
        .into_iter()
        .map(|v| v.clamp(0.0, 255.0) as f32)
        .collect();
    Image::from_map(FeatureMap::from_vec(3, rows, cols, data)?)
}

/// Blend toward white: `in + f * (255 - in)`.
pub fn fog(img: &Image, intensity: f32) -> Result<Image> {
    if !(0.0..=1.0).contains(&intensity) {
        return Err(Error::domain(format!(
            "fog intensity {intensity} outside [0, 1]"
        )));
    }
    if intensity == 0.0 {
        return Ok(img.clone());
    }
    if intensity == 1.0 {
        return Ok(Image::filled(img.rows(), img.cols(), [255.0; 3]));
    }
    Ok(img.map_pixels(|p| p.map(|v| (v + intensity * (255.0 - v)).min(255.0))))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Corruption {
    Blur {
        kernel: usize,
    },
    Illumination {
        incandescence: f64,
        luminescence: f64,
    },
    Noise {
        mean: f64,
        std: f64,
    },
    Fog {
        intensity: f32,
    },
}

impl Corruption {
    pub fn kind(&self) -> &'static str {
        match self {
            Corruption::Blur { .. } => "blur",
            Corruption::Illumination { .. } => "illumination",
            Corruption::Noise { .. } => "noise",
            Corruption::Fog { .. } => "fog",
        }
    }
}

impl fmt::Display for Corruption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Corruption::Blur { kernel } => write!(f, "blur(kernel={kernel})"),
            Corruption::Illumination {
                incandescence,
                luminescence,
            } => write!(
                f,
                "illumination(incandescence={incandescence},luminescence={luminescence})"
            ),
            Corruption::Noise { mean, std } => write!(f, "noise(mean={mean},std={std})"),
            Corruption::Fog { intensity } => write!(f, "fog(intensity={intensity})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Level {
    Low,
    Mild,
    High,
    Extreme,
}

impl Level {
    pub const ALL: [Level; 4] = [Level::Low, Level::Mild, Level::High, Level::Extreme];

    pub fn name(&self) -> &'static str {
        match self {
            Level::Low => "low",
            Level::Mild => "mild",
            Level::High => "high",
            Level::Extreme => "extreme",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(Level::Low),
            "mild" => Ok(Level::Mild),
            "high" => Ok(Level::High),
            "extreme" => Ok(Level::Extreme),
            other => Err(Error::domain(format!("unknown corruption level {other:?}"))),
        }
    }
}

/// A corruption with its named level (`None` for custom parameters) and
/// the seed used by stochastic kinds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorruptionConfig {
    pub corruption: Corruption,
    pub level: Option<Level>,
    pub seed: u64,
}

impl CorruptionConfig {
    pub fn custom(corruption: Corruption, seed: u64) -> Self {
        Self {
            corruption,
            level: None,
            seed,
        }
    }

    /// Applies to one image; `image_index` decorrelates noise across a set.
    pub fn apply(&self, img: &Image, image_index: u64) -> Result<Image> {
        match self.corruption {
            Corruption::Blur { kernel } => gaussian_blur(img, kernel),
            Corruption::Illumination {
                incandescence,
                luminescence,
            } => illumination(img, incandescence, luminescence),
            Corruption::Noise { mean, std } => gaussian_noise(
                img,
                mean,
                std,
                self.seed ^ image_index.wrapping_mul(0x9E37_79B9_7F4A_7C15),
            ),
            Corruption::Fog { intensity } => fog(img, intensity),
        }
    }
}

/// The fixed parameter row for a severity level. `Extreme` has no
/// illumination entry.
pub fn condition_suite(level: Level, seed: u64) -> Vec<CorruptionConfig> {
    let row: Vec<Corruption> = match level {
        Level::Low => vec![
            Corruption::Blur { kernel: 10 },
            Corruption::Illumination {
                incandescence: 0.9,
                luminescence: 0.6,
            },
            Corruption::Noise {
                mean: 2.0,
                std: 4.0,
            },
            Corruption::Fog { intensity: 0.3 },
        ],
        Level::Mild => vec![
            Corruption::Blur { kernel: 15 },
            Corruption::Illumination {
                incandescence: 1.1,
                luminescence: 0.6,
            },
            Corruption::Noise {
                mean: 2.0,
                std: 8.0,
            },
            Corruption::Fog { intensity: 0.6 },
        ],
        Level::High => vec![
            Corruption::Blur { kernel: 20 },
            Corruption::Illumination {
                incandescence: 1.3,
                luminescence: 0.6,
            },
            Corruption::Noise {
                mean: 2.0,
                std: 12.0,
            },
            Corruption::Fog { intensity: 0.9 },
        ],
        Level::Extreme => vec![
            Corruption::Blur { kernel: 40 },
            Corruption::Noise {
                mean: 2.0,
                std: 50.0,
            },
            Corruption::Fog { intensity: 0.975 },
        ],
    };
    row.into_iter()
        .map(|corruption| CorruptionConfig {
            corruption,
            level: Some(level),
            seed,
        })
        .collect()
}

pub fn condition_suite_named(level: &str, seed: u64) -> Result<Vec<CorruptionConfig>> {
    Ok(condition_suite(level.parse()?, seed))
}
