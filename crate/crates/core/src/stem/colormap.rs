//! False-color maps used for the thermal-like modality.

use std::sync::OnceLock;

use crate::error::{Error, Result};

/// The four selectable colormaps, identified by 1..=4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Colormap {
    Jet = 1,
    Rainbow = 2,
    Hsv = 3,
    Turbo = 4,
}

impl Colormap {
    pub const ALL: [Colormap; 4] = [
        Colormap::Jet,
        Colormap::Rainbow,
        Colormap::Hsv,
        Colormap::Turbo,
    ];

    pub fn from_id(id: i64) -> Result<Self> {
        match id {
            1 => Ok(Colormap::Jet),
            2 => Ok(Colormap::Rainbow),
            3 => Ok(Colormap::Hsv),
            4 => Ok(Colormap::Turbo),
            other => Err(Error::domain(format!("unknown colormap id {other}"))),
        }
    }

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            Colormap::Jet => "JET",
            Colormap::Rainbow => "RAINBOW",
            Colormap::Hsv => "HSV",
            Colormap::Turbo => "TURBO",
        }
    }
}

/// Color for intensity `t` in `[0, 1]`, each channel in `[0, 1]`.
pub fn colormap_lookup(map: Colormap, t: f32) -> Result<[f32; 3]> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::domain(format!("colormap input {t} outside [0, 1]")));
    }
    Ok(lookup_unchecked(map, t))
}

/// [`colormap_lookup`] for an integer identifier.
pub fn colormap_lookup_id(id: i64, t: f32) -> Result<[f32; 3]> {
    colormap_lookup(Colormap::from_id(id)?, t)
}

pub(crate) fn lookup_unchecked(map: Colormap, t: f32) -> [f32; 3] {
    let t = t.clamp(0.0, 1.0);
    match map {
        Colormap::Jet => [
            (1.5 - (4.0 * t - 3.0).abs()).clamp(0.0, 1.0),
            (1.5 - (4.0 * t - 2.0).abs()).clamp(0.0, 1.0),
            (1.5 - (4.0 * t - 1.0).abs()).clamp(0.0, 1.0),
        ],
        Colormap::Hsv => hsv_to_rgb(300.0 * t, 1.0, 1.0),
        Colormap::Rainbow => hsv_to_rgb(240.0 * (1.0 - t), 1.0, 1.0),
        Colormap::Turbo => turbo(t),
    }
}

fn turbo(t: f32) -> [f32; 3] {
    let lut = turbo_table();
    let x = t * 255.0;
    let i = (x.floor() as usize).min(254);
    let w = x - i as f32;
    let (a, b) = (lut[i], lut[i + 1]);
    [
        a[0] + w * (b[0] - a[0]),
        a[1] + w * (b[1] - a[1]),
        a[2] + w * (b[2] - a[2]),
    ]
}

fn turbo_table() -> &'static [[f32; 3]; 256] {
    static TABLE: OnceLock<[[f32; 3]; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let text = include_str!("../../assets/turbo_lut.txt");
        let mut table = [[0.0f32; 3]; 256];
        let rows = text
            .lines()
            .filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
        let mut n = 0;
        for (row, line) in table.iter_mut().zip(rows) {
            for (v, tok) in row.iter_mut().zip(line.split_whitespace()) {
                *v = tok.parse().expect("turbo table entry");
            }
            n += 1;
        }
        assert_eq!(n, 256, "turbo table must have 256 rows");
        table
    })
}

/// Standard hue (degrees) / saturation / value to RGB, all outputs in `[0, 1]`.
pub fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [f32; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r + m, g + m, b + m]
}

/// RGB in `[0, 1]` to (hue degrees, saturation, value).
pub fn rgb_to_hsv(rgb: [f32; 3]) -> (f32, f32, f32) {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}
