//! Seeded synthetic damage images with tight box annotations, plus a loader
//! for user-supplied images with a CSV of boxes.
//!
//! Rasterization uses only integer arithmetic so pixels are identical on
//! every platform.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io;
use crate::metrics::{BBox, GroundTruth, CLASS_NAMES};
use crate::par;
use crate::tensor::{FeatureMap, Image};

pub const MIN_SIZE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DamageClass {
    Undamaged = 0,
    Flexural = 1,
    Shear = 2,
    Combined = 3,
}

impl DamageClass {
    pub const ALL: [DamageClass; 4] = [
        DamageClass::Undamaged,
        DamageClass::Flexural,
        DamageClass::Shear,
        DamageClass::Combined,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }

    pub fn name(self) -> &'static str {
        CLASS_NAMES[self.id()]
    }
}

impl fmt::Display for DamageClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DamageClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Ok(id) = s.parse::<usize>() {
            return Self::from_id(id)
                .ok_or_else(|| Error::domain(format!("class id {id} out of range")));
        }
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::domain(format!("unknown class {s:?}")))
    }
}

/// Integer pixel box, `x2`/`y2` exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelBox {
    pub class: DamageClass,
    pub x1: u32,
    pub y1: u32,
    pub x2: u32,
    pub y2: u32,
}

impl PixelBox {
    pub fn to_bbox(&self) -> BBox {
        BBox {
            x1: self.x1 as f64,
            y1: self.y1 as f64,
            x2: self.x2 as f64,
            y2: self.y2 as f64,
        }
    }

    pub fn width(&self) -> u32 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> u32 {
        self.y2 - self.y1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub class: DamageClass,
    pub seed: u64,
    pub image: Image,
    pub boxes: Vec<PixelBox>,
}

impl Sample {
    pub fn ground_truth(&self, image_id: usize) -> Vec<GroundTruth> {
        self.boxes
            .iter()
            .map(|b| GroundTruth {
                bbox: b.to_bbox(),
                class: b.class.id(),
                image_id,
            })
            .collect()
    }
}

fn hash3(seed: u64, x: i64, y: i64) -> u64 {
    let mut z = seed
        ^ (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (y as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-item seed derived from a base seed.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    hash3(seed, stream as i64, index as i64)
}

/// Concrete-like gray texture: coarse blotches plus per-pixel grain.
fn background(size: usize, rng: &mut ChaCha8Rng) -> Vec<[i32; 3]> {
    let base: i32 = rng.random_range(120..=175);
    let tint = [rng.random_range(-8..=8), 0, rng.random_range(-8..=8)];
    let tex_seed: u64 = rng.random();
    const CELL: i64 = 8;
    let coarse = |gx: i64, gy: i64| (hash3(tex_seed, gx, gy) % 41) as i64 - 20;
    let mut px = Vec::with_capacity(size * size);
    for y in 0..size as i64 {
        for x in 0..size as i64 {
            let (gx, gy, fx, fy) = (x / CELL, y / CELL, x % CELL, y % CELL);
            let blotch = (coarse(gx, gy) * (CELL - fx) * (CELL - fy)
                + coarse(gx + 1, gy) * fx * (CELL - fy)
                + coarse(gx, gy + 1) * (CELL - fx) * fy
                + coarse(gx + 1, gy + 1) * fx * fy)
                / (CELL * CELL);
            let grain = (hash3(tex_seed ^ 1, x, y) % 25) as i64 - 12;
            let v = base + (blotch + grain) as i32;
            px.push(tint.map(|t| v + t));
        }
    }
    px
}

/// Pixel set of a stroke pattern in local coordinates.
#[derive(Debug, Default)]
struct Pattern {
    pixels: BTreeMap<(i32, i32), ()>,
}

impl Pattern {
    fn dot(&mut self, x: i32, y: i32, radius: i32) {
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                if dx * dx + dy * dy <= radius * radius + radius {
                    self.pixels.insert((x + dx, y + dy), ());
                }
            }
        }
    }

    /// Bresenham line thickened by `radius`.
    fn line(&mut self, (mut x0, mut y0): (i32, i32), (x1, y1): (i32, i32), radius: i32) {
        let dx = (x1 - x0).abs();
        let dy = -(y1 - y0).abs();
        let sx = if x0 < x1 { 1 } else { -1 };
        let sy = if y0 < y1 { 1 } else { -1 };
        let mut err = dx + dy;
        loop {
            self.dot(x0, y0, radius);
            if x0 == x1 && y0 == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x0 += sx;
            }
            if e2 <= dx {
                err += dx;
                y0 += sy;
            }
        }
    }

    /// Jagged polyline between two points with bounded perpendicular wander.
    fn crack(
        &mut self,
        a: (i32, i32),
        b: (i32, i32),
        wander: i32,
        radius: i32,
        rng: &mut ChaCha8Rng,
    ) {
        let steps = (((b.0 - a.0).abs().max((b.1 - a.1).abs())) / 6).max(1);
        let horizontalish = (b.0 - a.0).abs() >= (b.1 - a.1).abs();
        let mut prev = a;
        let mut offset = 0;
        for i in 1..=steps {
            if i < steps {
                offset = (offset + rng.random_range(-2..=2)).clamp(-wander, wander);
            } else {
                offset = 0;
            }
            let bx = a.0 + (b.0 - a.0) * i / steps;
            let by = a.1 + (b.1 - a.1) * i / steps;
            let next = if horizontalish {
                (bx, by + offset)
            } else {
                (bx + offset, by)
            };
            self.line(prev, next, radius);
            prev = next;
        }
    }

    fn blob(&mut self, cx: i32, cy: i32, rng: &mut ChaCha8Rng) {
        for _ in 0..4 {
            let r = rng.random_range(2..=4);
            self.dot(
                cx + rng.random_range(-3..=3),
                cy + rng.random_range(-3..=3),
                r,
            );
        }
    }

    fn bounds(&self) -> (i32, i32, i32, i32) {
        let mut b = (i32::MAX, i32::MAX, i32::MIN, i32::MIN);
        for &(x, y) in self.pixels.keys() {
            b = (b.0.min(x), b.1.min(y), b.2.max(x + 1), b.3.max(y + 1));
        }
        b
    }
}

fn flexural_pattern(size: i32, rng: &mut ChaCha8Rng) -> Pattern {
    let mut p = Pattern::default();
    let len = rng.random_range(size * 7 / 16..=size * 5 / 8);
    // Wander stays small enough that the box is at least 3:1.
    let wander = 2;
    if rng.random_bool(0.5) {
        p.crack((0, 0), (len, 0), wander, 2, rng);
    } else {
        p.crack((0, 0), (0, len), wander, 2, rng);
    }
    p
}

fn shear_pattern(size: i32, rng: &mut ChaCha8Rng) -> Pattern {
    let mut p = Pattern::default();
    let s = rng.random_range(size * 5 / 16..=size / 2);
    let h = rng.random_range(s * 3 / 4..=s);
    match rng.random_range(0..3) {
        0 => {
            p.crack((0, 0), (s, h), 2, 1, rng);
            p.crack((s, 0), (0, h), 2, 1, rng);
        }
        1 => {
            p.crack((0, 0), (s / 2, h), 2, 1, rng);
            p.crack((s, 0), (s / 2, h), 2, 1, rng);
        }
        _ => {
            if rng.random_bool(0.5) {
                p.crack((0, 0), (s, h), 2, 2, rng);
            } else {
                p.crack((s, 0), (0, h), 2, 2, rng);
            }
        }
    }
    p
}

fn combined_pattern(size: i32, rng: &mut ChaCha8Rng) -> Pattern {
    let mut p = Pattern::default();
    let w = rng.random_range(size * 7 / 16..=size * 5 / 8);
    let h = rng.random_range(w * 2 / 3..=w);
    let mid = h / 2;
    p.crack((0, mid), (w, mid), 2, 2, rng);
    if rng.random_bool(0.5) {
        p.crack((w / 3, 0), (w, h), 2, 1, rng);
    } else {
        p.crack((w * 2 / 3, 0), (0, h), 2, 1, rng);
    }
    p.blob(w / 2, mid, rng);
    p
}

fn disjoint(a: &(i32, i32, i32, i32), b: &(i32, i32, i32, i32), gap: i32) -> bool {
    a.2 + gap <= b.0 || b.2 + gap <= a.0 || a.3 + gap <= b.1 || b.3 + gap <= a.1
}

/// One image of `class` with its boxes. Damaged classes get one or two
/// non-overlapping instances; undamaged images get none.
pub fn generate_sample(class: DamageClass, seed: u64, size: usize) -> Result<Sample> {
    if size < MIN_SIZE {
        return Err(Error::domain(format!(
            "image size {size} below minimum {MIN_SIZE}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut px = background(size, &mut rng);
    let s = size as i32;
    let count = match class {
        DamageClass::Undamaged => 0,
        _ if rng.random_bool(0.3) => 2,
        _ => 1,
    };
    let margin = 2;
    let mut placed: Vec<(i32, i32, i32, i32)> = Vec::new();
    let mut strokes: Vec<Pattern> = Vec::new();
    for _ in 0..count {
        let pattern = match class {
            DamageClass::Flexural => flexural_pattern(s, &mut rng),
            DamageClass::Shear => shear_pattern(s, &mut rng),
            _ => combined_pattern(s, &mut rng),
        };
        let (bx1, by1, bx2, by2) = pattern.bounds();
        let (w, h) = (bx2 - bx1, by2 - by1);
        if w + 2 * margin > s || h + 2 * margin > s {
            continue;
        }
        for _ in 0..30 {
            let ox = rng.random_range(margin..=s - margin - w) - bx1;
            let oy = rng.random_range(margin..=s - margin - h) - by1;
            let rect = (bx1 + ox, by1 + oy, bx2 + ox, by2 + oy);
            if placed.iter().all(|p| disjoint(p, &rect, 2)) {
                placed.push(rect);
                let mut moved = Pattern::default();
                for &(x, y) in pattern.pixels.keys() {
                    moved.pixels.insert((x + ox, y + oy), ());
                }
                strokes.push(moved);
                break;
            }
        }
    }
    for stroke in &strokes {
        let shade: i32 = rng.random_range(25..=60);
        for &(x, y) in stroke.pixels.keys() {
            let jitter = (hash3(seed, x as i64, y as i64) % 11) as i32 - 5;
            px[(y * s + x) as usize] = [shade + jitter; 3];
        }
    }
    let boxes = placed
        .iter()
        .map(|&(x1, y1, x2, y2)| PixelBox {
            class,
            x1: x1 as u32,
            y1: y1 as u32,
            x2: x2 as u32,
            y2: y2 as u32,
        })
        .collect();
    let image = Image::from_fn(size, size, |c, r, k| {
        px[r * size + k][c].clamp(0, 255) as f32
    });
    Ok(Sample {
        class,
        seed,
        image,
        boxes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::domain(format!("unknown split {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn split(&self, s: Split) -> &[Sample] {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Class-balanced splits; sample `i` of a split has class `i mod 4`.
pub fn generate_dataset(
    n_train: usize,
    n_val: usize,
    n_test: usize,
    seed: u64,
    size: usize,
) -> Result<Dataset> {
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::domain("every split needs at least one sample"));
    }
    let make = |split: Split, n: usize| -> Result<Vec<Sample>> {
        par::map_range(n, |i| {
            let class = DamageClass::ALL[i % 4];
            generate_sample(class, derive_seed(seed, split as u64, i as u64), size)
        })
        .into_iter()
        .collect()
    };
    Ok(Dataset {
        train: make(Split::Train, n_train)?,
        val: make(Split::Val, n_val)?,
        test: make(Split::Test, n_test)?,
    })
}

pub const MANIFEST_HEADER: &str = "split,file,class,x1,y1,x2,y2";

/// Manifest text: one row per box, or one row with empty coordinates for an
/// image without boxes.
pub fn manifest_csv(ds: &Dataset) -> String {
    let mut s = String::from(MANIFEST_HEADER);
    s.push('\n');
    for split in Split::ALL {
        for (i, sample) in ds.split(split).iter().enumerate() {
            let file = format!("{}/{i:05}.spfm", split.name());
            if sample.boxes.is_empty() {
                s.push_str(&format!("{},{file},{},,,,\n", split.name(), sample.class));
            }
            for b in &sample.boxes {
                s.push_str(&format!(
                    "{},{file},{},{},{},{},{}\n",
                    split.name(),
                    b.class,
                    b.x1,
                    b.y1,
                    b.x2,
                    b.y2
                ));
            }
        }
    }
    s
}

/// Writes images and `manifest.csv` under `dir`; returns the manifest path.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<PathBuf> {
    for split in Split::ALL {
        let sub = dir.join(split.name());
        fs::create_dir_all(&sub)?;
        for (i, sample) in ds.split(split).iter().enumerate() {
            io::spfm::write_image(&sub.join(format!("{i:05}.spfm")), &sample.image)?;
        }
    }
    let path = dir.join("manifest.csv");
    fs::write(&path, manifest_csv(ds))?;
    Ok(path)
}

/// Rows of an annotation CSV grouped by file, first-seen order.
struct Annotated {
    file: String,
    class: DamageClass,
    boxes: Vec<(usize, [f64; 4])>,
}

/// Annotation groups (with their split when present) and the problems found.
type ParsedAnnotations = (Vec<(Option<Split>, Annotated)>, Vec<String>);

fn parse_annotations(path: &Path, with_split: bool) -> Result<ParsedAnnotations> {
    if !path.exists() {
        return Err(Error::Missing(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Format {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
    let mut groups: Vec<(Option<Split>, Annotated)> = Vec::new();
    let mut problems = Vec::new();
    let offset = usize::from(with_split);
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                problems.push(format!("row {line}: {e}"));
                continue;
            }
        };
        if rec.len() != 6 + offset {
            problems.push(format!(
                "row {line}: expected {} fields, found {}",
                6 + offset,
                rec.len()
            ));
            continue;
        }
        let split = if with_split {
            match rec[0].parse::<Split>() {
                Ok(s) => Some(s),
                Err(e) => {
                    problems.push(format!("row {line}: {e}"));
                    continue;
                }
            }
        } else {
            None
        };
        let file = rec[offset].to_string();
        let class = match rec[offset + 1].parse::<DamageClass>() {
            Ok(c) => c,
            Err(e) => {
                problems.push(format!("row {line}: {e}"));
                continue;
            }
        };
        let coords: Vec<&str> = (offset + 2..offset + 6).map(|j| &rec[j]).collect();
        let bbox = if coords.iter().all(|c| c.is_empty()) {
            None
        } else {
            match coords
                .iter()
                .map(|c| c.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
            {
                Ok(v) if v[0] < v[2] && v[1] < v[3] && v.iter().all(|x| x.is_finite()) => {
                    Some([v[0], v[1], v[2], v[3]])
                }
                Ok(v) => {
                    problems.push(format!("row {line}: degenerate box {v:?}"));
                    continue;
                }
                Err(_) => {
                    problems.push(format!("row {line}: malformed coordinates {coords:?}"));
                    continue;
                }
            }
        };
        let pos = groups
            .iter()
            .position(|(s, g)| g.file == file && *s == split);
        let group = match pos {
            Some(p) => &mut groups[p].1,
            None => {
                groups.push((
                    split,
                    Annotated {
                        file,
                        class,
                        boxes: Vec::new(),
                    },
                ));
                &mut groups.last_mut().expect("just pushed").1
            }
        };
        if let Some(b) = bbox {
            group.boxes.push((line, b));
        }
    }
    Ok((groups, problems))
}

/// Loaded samples and non-fatal notes.
#[derive(Debug, Clone, Default)]
pub struct Loaded {
    pub samples: Vec<Sample>,
    pub warnings: Vec<String>,
}

fn load_groups(
    dir: &Path,
    csv_path: &Path,
    groups: Vec<Annotated>,
    mut problems: Vec<String>,
) -> Result<Loaded> {
    let mut samples = Vec::new();
    for g in groups {
        let path = dir.join(&g.file);
        let image = match io::read_image(&path) {
            Ok(img) => img,
            Err(e) => {
                problems.push(format!("{}: {e}", g.file));
                continue;
            }
        };
        let (w, h) = (image.cols() as f64, image.rows() as f64);
        let mut boxes = Vec::new();
        for (line, [x1, y1, x2, y2]) in g.boxes {
            if x1 < 0.0 || y1 < 0.0 || x2 > w || y2 > h {
                problems.push(format!("row {line}: box exceeds {w}x{h} image bounds"));
                continue;
            }
            boxes.push(PixelBox {
                class: g.class,
                x1: x1.floor() as u32,
                y1: y1.floor() as u32,
                x2: x2.ceil() as u32,
                y2: y2.ceil() as u32,
            });
        }
        samples.push(Sample {
            class: g.class,
            seed: 0,
            image,
            boxes,
        });
    }
    if !problems.is_empty() {
        return Err(Error::Parse {
            path: csv_path.to_path_buf(),
            line: problems
                .iter()
                .find_map(|p| p.strip_prefix("row ")?.split(':').next()?.parse().ok())
                .unwrap_or(0),
            msg: problems.join("; "),
        });
    }
    let mut warnings = Vec::new();
    if samples.is_empty() {
        warnings.push(format!("{} lists no images", csv_path.display()));
    }
    Ok(Loaded { samples, warnings })
}

/// Loads images under `dir` listed in a `file,class,x1,y1,x2,y2` CSV.
/// Coordinates may be empty for images without damage. Every problem is
/// reported at once.
pub fn load_folder(dir: &Path, annotations_csv: &Path) -> Result<Loaded> {
    let (groups, problems) = parse_annotations(annotations_csv, false)?;
    load_groups(
        dir,
        annotations_csv,
        groups.into_iter().map(|(_, g)| g).collect(),
        problems,
    )
}

/// Reads a directory written by [`write_dataset`].
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = dir.join("manifest.csv");
    let (groups, problems) = parse_annotations(&manifest, true)?;
    let mut by_split: BTreeMap<Split, Vec<Annotated>> = BTreeMap::new();
    for (s, g) in groups {
        by_split
            .entry(s.expect("split column"))
            .or_default()
            .push(g);
    }
    if !problems.is_empty() {
        load_groups(dir, &manifest, Vec::new(), problems)?;
    }
    let mut ds = Dataset::default();
    for (split, groups) in by_split {
        let loaded = load_groups(dir, &manifest, groups, Vec::new())?;
        match split {
            Split::Train => ds.train = loaded.samples,
            Split::Val => ds.val = loaded.samples,
            Split::Test => ds.test = loaded.samples,
        }
    }
    Ok(ds)
}

/// Maps every sample's image through `f`, keeping annotations.
pub fn map_images(
    samples: &[Sample],
    f: impl Fn(usize, &Image) -> Result<Image> + Sync + Send,
) -> Result<Vec<Sample>> {
    par::map_indexed(samples, |i, s| {
        Ok(Sample {
            image: f(i, &s.image)?,
            ..s.clone()
        })
    })
    .into_iter()
    .collect()
}

/// Normalized training input for RGB-only models.
pub fn rgb_input(s: &Sample) -> FeatureMap {
    s.image.normalized()
}
