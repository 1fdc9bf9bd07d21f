//! Stem block: turns the predictor's two tuples into a thermal-like image and
//! a dark-theme image, then stacks both with the original RGB.

mod colormap;

pub use colormap::{colormap_lookup, colormap_lookup_id, hsv_to_rgb, rgb_to_hsv, Colormap};

use crate::error::{Error, Result};
use crate::tensor::{channel_concat, FeatureMap, Image};

/// Number of raw predictor outputs: 2 thermal values and 5 dark-theme values.
pub const RAW_PREDICTIONS: usize = 7;

/// Thermal tuple: colormap choice and blend weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermalParams {
    pub colormap: Colormap,
    pub alpha: f32,
}

/// Dark-theme tuple. Every field is in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DarkParams {
    pub brightness: f32,
    pub contrast: f32,
    pub gamma: f32,
    pub saturation: f32,
    pub hue_shift: f32,
}

impl DarkParams {
    /// The parameter vector that leaves an image untouched.
    pub const IDENTITY: DarkParams = DarkParams {
        brightness: 1.0,
        contrast: 1.0,
        gamma: 0.5,
        saturation: 1.0,
        hue_shift: 0.0,
    };
}

/// Clamped predictor output driving the stem block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionTuples {
    pub thermal: ThermalParams,
    pub dark: DarkParams,
}

impl PredictionTuples {
    /// Back to the 7-value layout `[colormap, alpha, b, c, g, s, h]`.
    pub fn to_array(&self) -> [f32; RAW_PREDICTIONS] {
        let d = &self.dark;
        [
            self.thermal.colormap.id() as f32,
            self.thermal.alpha,
            d.brightness,
            d.contrast,
            d.gamma,
            d.saturation,
            d.hue_shift,
        ]
    }
}

/// Rounds the colormap value into `1..=4` and clamps the rest into `[0, 1]`.
pub fn clamp_predictions(raw: &[f32; RAW_PREDICTIONS]) -> Result<PredictionTuples> {
    if let Some(i) = raw.iter().position(|v| !v.is_finite()) {
        return Err(Error::domain(format!(
            "prediction {i} is not finite ({})",
            raw[i]
        )));
    }
    let id = (raw[0].round() as i64).clamp(1, 4);
    let unit = |v: f32| v.clamp(0.0, 1.0);
    Ok(PredictionTuples {
        thermal: ThermalParams {
            colormap: Colormap::from_id(id)?,
            alpha: unit(raw[1]),
        },
        dark: DarkParams {
            brightness: unit(raw[2]),
            contrast: unit(raw[3]),
            gamma: unit(raw[4]),
            saturation: unit(raw[5]),
            hue_shift: unit(raw[6]),
        },
    })
}

/// Which intensity feeds the thermal colormap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ThermalSource {
    /// Rec. 601 luma of the pixel.
    #[default]
    Luma,
    /// Each channel is mapped independently and keeps its own component.
    PerChannel,
}

impl std::str::FromStr for ThermalSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "luma" => Ok(ThermalSource::Luma),
            "per_channel" => Ok(ThermalSource::PerChannel),
            other => Err(Error::Config(format!("unknown thermal source {other:?}"))),
        }
    }
}

impl std::fmt::Display for ThermalSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ThermalSource::Luma => "luma",
            ThermalSource::PerChannel => "per_channel",
        })
    }
}

#[inline]
pub fn luma(rgb: [f32; 3]) -> f32 {
    0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]
}

/// Blends a colormapped copy of the image over the original.
pub fn thermal_overlay(img: &Image, t_e: &ThermalParams) -> Image {
    thermal_overlay_with(img, t_e, ThermalSource::Luma)
}

pub fn thermal_overlay_with(img: &Image, t_e: &ThermalParams, source: ThermalSource) -> Image {
    let alpha = t_e.alpha;
    let map = t_e.colormap;
    img.map_pixels(|px| {
        let color = match source {
            ThermalSource::Luma => colormap::lookup_unchecked(map, luma(px) / 255.0),
            ThermalSource::PerChannel => {
                [0, 1, 2].map(|c| colormap::lookup_unchecked(map, px[c] / 255.0)[c])
            }
        };
        [0, 1, 2].map(|c| alpha * (color[c] * 255.0) + (1.0 - alpha) * px[c])
    })
}

/// Brightness, contrast, gamma, saturation and hue, applied in that order.
///
/// Each stage has an identity parameter (1, 1, 0.5, 1, 0) and is skipped
/// exactly when its parameter takes that value.
pub fn dark_theme_overlay(img: &Image, d_t: &DarkParams) -> Image {
    let gain = 0.2 + 0.8 * d_t.brightness;
    let slope = 0.5 + 0.5 * d_t.contrast;
    let exponent = 2f32.powf(2.0 * d_t.gamma - 1.0);
    let sat = d_t.saturation;
    let hue_deg = (d_t.hue_shift * 360.0).rem_euclid(360.0);
    let rotate = d_t.hue_shift.fract() != 0.0 && hue_deg != 0.0;

    img.map_pixels(|mut p| {
        if d_t.brightness != 1.0 {
            p = p.map(|v| v * gain);
        }
        if d_t.contrast != 1.0 {
            p = p.map(|v| ((v - 127.5) * slope + 127.5).clamp(0.0, 255.0));
        }
        if d_t.gamma != 0.5 {
            p = p.map(|v| 255.0 * (v / 255.0).powf(exponent));
        }
        if sat != 1.0 {
            let y = luma(p);
            p = p.map(|v| y + sat * (v - y));
        }
        if rotate {
            let (h, s, v) = rgb_to_hsv(p.map(|v| (v / 255.0).clamp(0.0, 1.0)));
            p = hsv_to_rgb(h + hue_deg, s, v).map(|v| v * 255.0);
        }
        p
    })
}

/// The three modalities and their normalized 9-channel stack (TL, DT, RGB).
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityStack {
    pub tl: Image,
    pub dt: Image,
    pub rgb: Image,
    pub stacked: FeatureMap,
}

pub fn build_modality_stack(img: &Image, preds: &PredictionTuples) -> ModalityStack {
    build_modality_stack_with(img, preds, ThermalSource::Luma)
}

pub fn build_modality_stack_with(
    img: &Image,
    preds: &PredictionTuples,
    source: ThermalSource,
) -> ModalityStack {
    let tl = thermal_overlay_with(img, &preds.thermal, source);
    let dt = dark_theme_overlay(img, &preds.dark);
    let stacked = stack3(&tl, &dt, img);
    ModalityStack {
        tl,
        dt,
        rgb: img.clone(),
        stacked,
    }
}

fn stack3(a: &Image, b: &Image, c: &Image) -> FeatureMap {
    let ab = channel_concat(&a.normalized(), &b.normalized()).expect("same image size");
    channel_concat(&ab, &c.normalized()).expect("same image size")
}

impl ModalityStack {
    /// Stack with the thermal image in all three slots.
    pub fn thermal_only(&self) -> FeatureMap {
        stack3(&self.tl, &self.tl, &self.tl)
    }

    /// Stack with the dark-theme image in all three slots.
    pub fn dark_only(&self) -> FeatureMap {
        stack3(&self.dt, &self.dt, &self.dt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, rows: usize, cols: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals: Vec<f32> = (0..3 * rows * cols)
            .map(|_| rng.random_range(0.0f32..=255.0))
            .collect();
        Image::from_map(FeatureMap::from_vec(3, rows, cols, vals).unwrap()).unwrap()
    }

    #[test]
    fn clamp_cases() {
        let p = clamp_predictions(&[2.4, -0.3, 0.42, 2.0, 0.5, 0.1, 1.0]).unwrap();
        assert_eq!(p.thermal.colormap, Colormap::Rainbow);
        assert_eq!(p.thermal.alpha, 0.0);
        assert_eq!(p.dark.brightness, 0.42);
        assert_eq!(p.dark.contrast, 1.0);
        let lo = clamp_predictions(&[-7.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(lo.thermal.colormap, Colormap::Jet);
        let hi = clamp_predictions(&[9.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(hi.thermal.colormap, Colormap::Turbo);
        assert!(clamp_predictions(&[f32::NAN, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn thermal_alpha_zero_is_identity() {
        let img = random_image(1, 9, 7);
        let out = thermal_overlay(
            &img,
            &ThermalParams {
                colormap: Colormap::Turbo,
                alpha: 0.0,
            },
        );
        assert_eq!(out, img);
    }

    #[test]
    fn thermal_black_pixel_half_alpha() {
        let img = Image::filled(1, 1, [0.0, 0.0, 0.0]);
        let out = thermal_overlay(
            &img,
            &ThermalParams {
                colormap: Colormap::Jet,
                alpha: 0.5,
            },
        );
        assert_eq!(out.pixel(0, 0), [0.0, 0.0, 63.75]);
    }

    #[test]
    fn thermal_full_alpha_gray() {
        // luma(128,128,128) = 128 (weights sum to 1); t = 128/255.
        let img = Image::filled(2, 2, [128.0; 3]);
        let out = thermal_overlay(
            &img,
            &ThermalParams {
                colormap: Colormap::Jet,
                alpha: 1.0,
            },
        );
        let t = 128.0f64 / 255.0;
        let expect = [
            (1.5 - (4.0 * t - 3.0).abs()).clamp(0.0, 1.0) * 255.0,
            (1.5 - (4.0 * t - 2.0).abs()).clamp(0.0, 1.0) * 255.0,
            (1.5 - (4.0 * t - 1.0).abs()).clamp(0.0, 1.0) * 255.0,
        ];
        for (got, want) in out.pixel(1, 1).iter().zip(expect) {
            assert!((*got as f64 - want).abs() < 1e-3);
        }
        assert!((expect[0] - 129.5).abs() < 1e-9 && (expect[1] - 255.0).abs() < 1e-9);
    }

    #[test]
    fn thermal_affine_in_alpha() {
        // Mid-range pixels keep every blend inside [0, 255], so no clamping.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vals: Vec<f32> = (0..3 * 36)
            .map(|_| rng.random_range(40.0f32..200.0))
            .collect();
        let img = Image::from_map(FeatureMap::from_vec(3, 6, 6, vals).unwrap()).unwrap();
        for map in Colormap::ALL {
            let at = |a: f32| {
                thermal_overlay(
                    &img,
                    &ThermalParams {
                        colormap: map,
                        alpha: a,
                    },
                )
                .normalized()
            };
            let (one, zero) = (at(1.0), at(0.0));
            for alpha in [0.1f32, 0.37, 0.5, 0.9] {
                let mid = at(alpha);
                for i in 0..mid.len() {
                    let lin = alpha * one.data()[i] + (1.0 - alpha) * zero.data()[i];
                    assert!((mid.data()[i] - lin).abs() <= 1e-5);
                }
            }
        }
    }

    #[test]
    fn dark_identity_vector() {
        let img = random_image(2, 8, 8);
        assert_eq!(dark_theme_overlay(&img, &DarkParams::IDENTITY), img);
    }

    #[test]
    fn dark_brightness_stage() {
        let img = Image::filled(1, 1, [200.0; 3]);
        let out = dark_theme_overlay(
            &img,
            &DarkParams {
                brightness: 0.0,
                ..DarkParams::IDENTITY
            },
        );
        assert_eq!(out.pixel(0, 0), [40.0; 3]);
    }

    #[test]
    fn dark_full_hue_turn_is_identity() {
        let img = random_image(3, 5, 5);
        let out = dark_theme_overlay(
            &img,
            &DarkParams {
                hue_shift: 1.0,
                ..DarkParams::IDENTITY
            },
        );
        assert_eq!(out, img);
    }

    #[test]
    fn dark_stages_are_monotone_darkening() {
        let img = Image::filled(1, 1, [180.0, 120.0, 60.0]);
        let dim = dark_theme_overlay(
            &img,
            &DarkParams {
                brightness: 0.3,
                ..DarkParams::IDENTITY
            },
        );
        let dimmer = dark_theme_overlay(
            &img,
            &DarkParams {
                brightness: 0.1,
                ..DarkParams::IDENTITY
            },
        );
        for c in 0..3 {
            assert!(dimmer.pixel(0, 0)[c] <= dim.pixel(0, 0)[c]);
        }
        let desat = dark_theme_overlay(
            &img,
            &DarkParams {
                saturation: 0.0,
                ..DarkParams::IDENTITY
            },
        );
        let p = desat.pixel(0, 0);
        assert!((p[0] - p[1]).abs() < 1e-3 && (p[1] - p[2]).abs() < 1e-3);
    }

    #[test]
    fn transforms_stay_in_range() {
        let img = random_image(4, 10, 10);
        for raw in [
            [1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.3],
            [4.0, 0.6, 1.0, 0.2, 1.0, 1.0, 0.9],
            [3.0, 0.2, 0.5, 1.0, 0.0, 0.5, 0.5],
        ] {
            let p = clamp_predictions(&raw).unwrap();
            let s = build_modality_stack(&img, &p);
            assert!(s.tl.in_range() && s.dt.in_range());
            assert!(s.stacked.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn identity_stack_repeats_rgb() {
        let img = random_image(6, 4, 4);
        let p = PredictionTuples {
            thermal: ThermalParams {
                colormap: Colormap::Jet,
                alpha: 0.0,
            },
            dark: DarkParams::IDENTITY,
        };
        let s = build_modality_stack(&img, &p);
        assert_eq!(s.stacked.channels(), 9);
        let rgb = img.normalized();
        for block in 0..3 {
            assert_eq!(
                s.stacked.slice_channels(3 * block, 3 * block + 3).unwrap(),
                rgb
            );
        }
    }

    #[test]
    fn pinned_stack_checksum() {
        let img = random_image(2024, 16, 16);
        let p = clamp_predictions(&[3.0, 0.65, 0.3, 0.7, 0.8, 0.4, 0.25]).unwrap();
        let s = build_modality_stack(&img, &p);
        let sum: f64 = s.stacked.data().iter().map(|&v| v as f64).sum();
        // Frozen from the first build of this implementation.
        assert!((sum - PINNED_STACK_SUM).abs() < 1e-4, "{sum}");
    }

    const PINNED_STACK_SUM: f64 = 888.349_249_947_234_1;
}
