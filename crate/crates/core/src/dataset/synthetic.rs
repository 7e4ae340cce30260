//! Two-domain synthetic image generator.
//!
//! Each image shows one centered shape. The geometry (shape kind, size,
//! rotation, offset) depends only on the seed, class and image index, so
//! both domains draw exactly the same masks. Only the rendering differs:
//!
//! * natural: smooth radial background gradient, Gaussian-textured fill,
//!   anti-aliased edges;
//! * illustration: white background, flat fill, hard 1-px dark outline.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::{io_err, save_rgb, split_manifest, DatasetError, DatasetManifest, Fractions, Record, Result, RgbImage, Split};
use crate::rng::{self, tag};

pub const SHAPES: [&str; 8] = ["disk", "triangle", "cross", "ring", "bar", "star", "square", "crescent"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Natural,
    Illustration,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Natural => "natural",
            Domain::Illustration => "illustration",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Domain::Natural => 0,
            Domain::Illustration => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub num_classes: usize,
    pub per_class: usize,
    pub side: usize,
    pub domain: Domain,
    /// Fraction of train labels reassigned uniformly at random.
    pub label_noise: f64,
    pub fractions: Fractions,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_classes: 6,
            per_class: 200,
            side: 64,
            domain: Domain::Natural,
            label_noise: 0.0,
            fractions: Fractions::default(),
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(DatasetError::Config(m));
        if self.side == 0 || self.side % 32 != 0 {
            return err(format!("side {} is not divisible by 32", self.side));
        }
        if !(2..=SHAPES.len()).contains(&self.num_classes) {
            return err(format!("num_classes {} outside 2..={}", self.num_classes, SHAPES.len()));
        }
        if self.per_class < 3 {
            return err(format!("per_class {} below 3", self.per_class));
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return err(format!("label noise {} outside [0,1]", self.label_noise));
        }
        self.fractions.validate()
    }

    pub fn class_names(&self) -> Vec<String> {
        SHAPES[..self.num_classes].iter().map(|s| s.to_string()).collect()
    }
}

/// Placement of one shape, in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    pub shape: usize,
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    pub angle: f64,
}

impl Geometry {
    pub fn sample(seed: u64, class: usize, index: usize, side: usize) -> Self {
        let mut r = rng::stream(seed, &[tag::GEOMETRY, class as u64, index as u64]);
        let s = side as f64;
        Self {
            shape: class,
            radius: s * r.random_range(0.26..0.40),
            cx: s * (0.5 + r.random_range(-0.08..0.08)),
            cy: s * (0.5 + r.random_range(-0.08..0.08)),
            angle: r.random_range(0.0..2.0 * PI),
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = ((x - self.cx) / self.radius, (y - self.cy) / self.radius);
        let (sin, cos) = self.angle.sin_cos();
        let (u, v) = (cos * dx + sin * dy, -sin * dx + cos * dy);
        inside_unit_shape(self.shape, u, v)
    }

    /// Fraction of a 4x4 subsample grid per pixel falling inside the shape.
    pub fn coverage(&self, side: usize) -> Vec<f32> {
        const SUB: usize = 4;
        let mut cov = vec![0f32; side * side];
        for y in 0..side {
            for x in 0..side {
                let mut hits = 0;
                for sy in 0..SUB {
                    for sx in 0..SUB {
                        let px = x as f64 + (sx as f64 + 0.5) / SUB as f64;
                        let py = y as f64 + (sy as f64 + 0.5) / SUB as f64;
                        hits += self.contains(px, py) as usize;
                    }
                }
                cov[y * side + x] = hits as f32 / (SUB * SUB) as f32;
            }
        }
        cov
    }

    pub fn mask(&self, side: usize) -> Vec<bool> {
        self.coverage(side).into_iter().map(|c| c >= 0.5).collect()
    }
}

fn polygon_contains(pts: &[(f64, f64)], u: f64, v: f64) -> bool {
    let mut inside = false;
    let mut j = pts.len() - 1;
    for i in 0..pts.len() {
        let ((xi, yi), (xj, yj)) = (pts[i], pts[j]);
        if (yi > v) != (yj > v) && u < (xj - xi) * (v - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn regular_points(count: usize, radii: &[f64]) -> Vec<(f64, f64)> {
    (0..count)
        .map(|i| {
            let a = PI / 2.0 + 2.0 * PI * i as f64 / count as f64;
            let r = radii[i % radii.len()];
            (r * a.cos(), r * a.sin())
        })
        .collect()
}

fn inside_unit_shape(shape: usize, u: f64, v: f64) -> bool {
    let r2 = u * u + v * v;
    match SHAPES[shape] {
        "disk" => r2 <= 1.0,
        "triangle" => polygon_contains(&regular_points(3, &[1.0]), u, v),
        "cross" => (u.abs() <= 1.0 && v.abs() <= 0.3) || (u.abs() <= 0.3 && v.abs() <= 1.0),
        "ring" => (0.3025..=1.0).contains(&r2),
        "bar" => u.abs() <= 1.0 && v.abs() <= 0.35,
        "star" => polygon_contains(&regular_points(10, &[1.0, 0.45]), u, v),
        "square" => u.abs() <= 0.72 && v.abs() <= 0.72,
        "crescent" => r2 <= 1.0 && (u - 0.45).powi(2) + v * v > 0.64,
        other => unreachable!("unknown shape {other}"),
    }
}

fn clamp_u8(x: f64) -> u8 {
    x.round().clamp(0.0, 255.0) as u8
}

fn lerp(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|c| a[c] + (b[c] - a[c]) * t)
}

fn random_color(r: &mut rng::Rng) -> [f64; 3] {
    [0, 1, 2].map(|_| r.random_range(0.0..255.0))
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|c| (a[c] - b[c]).powi(2)).sum::<f64>().sqrt()
}

/// Pixels inside the mask with at least one 4-neighbour outside it (or on
/// the image border).
pub fn boundary(mask: &[bool], side: usize) -> Vec<bool> {
    let at = |x: isize, y: isize| x >= 0 && y >= 0 && (x as usize) < side && (y as usize) < side && mask[y as usize * side + x as usize];
    (0..side * side)
        .map(|i| {
            let (x, y) = ((i % side) as isize, (i / side) as isize);
            mask[i] && !(at(x - 1, y) && at(x + 1, y) && at(x, y - 1) && at(x, y + 1))
        })
        .collect()
}

fn render_natural(geom: &Geometry, side: usize, r: &mut rng::Rng) -> RgbImage {
    let cov = geom.coverage(side);
    let (inner, outer) = (random_color(r), random_color(r));
    let mut fill = random_color(r);
    for _ in 0..32 {
        if distance(fill, lerp(inner, outer, 0.5)) >= 90.0 {
            break;
        }
        fill = random_color(r);
    }
    let (gx, gy) = (r.random_range(0.0..side as f64), r.random_range(0.0..side as f64));
    let noise = Normal::new(0.0, 28.0).expect("valid std");
    let mut img = RgbImage::new(side, side);
    for y in 0..side {
        for x in 0..side {
            let d = ((x as f64 - gx).powi(2) + (y as f64 - gy).powi(2)).sqrt();
            let bg = lerp(inner, outer, (d / (side as f64 * 0.9)).min(1.0));
            let c = cov[y * side + x] as f64;
            let px = [0, 1, 2].map(|ch| {
                let textured = fill[ch] + noise.sample(r);
                clamp_u8(bg[ch] * (1.0 - c) + textured * c)
            });
            img.set(x, y, px);
        }
    }
    img
}

fn render_illustration(geom: &Geometry, side: usize, r: &mut rng::Rng) -> RgbImage {
    let mask = geom.mask(side);
    let edge = boundary(&mask, side);
    // saturated flat colour: one channel high, one low, one free
    let hue = r.random_range(0..6usize);
    let free = r.random_range(0.0..255.0);
    let (hi, lo) = (r.random_range(170.0..250.0), r.random_range(0.0..60.0));
    let fill = match hue {
        0 => [hi, lo, free],
        1 => [hi, free, lo],
        2 => [lo, hi, free],
        3 => [free, hi, lo],
        4 => [lo, free, hi],
        _ => [free, lo, hi],
    }
    .map(clamp_u8);
    let outline = [0, 1, 2].map(|_| r.random_range(10..50u8));
    let mut img = RgbImage::filled(side, side, [255; 3]);
    for i in 0..side * side {
        if edge[i] {
            img.set(i % side, i / side, outline);
        } else if mask[i] {
            img.set(i % side, i / side, fill);
        }
    }
    img
}

/// Renders image `index` of `class`; also returns its shape mask.
pub fn render(config: &SyntheticConfig, class: usize, index: usize) -> (RgbImage, Vec<bool>) {
    let geom = Geometry::sample(config.seed, class, index, config.side);
    let mut r = rng::stream(config.seed, &[tag::RENDER, config.domain.tag(), class as u64, index as u64]);
    let img = match config.domain {
        Domain::Natural => render_natural(&geom, config.side, &mut r),
        Domain::Illustration => render_illustration(&geom, config.side, &mut r),
    };
    (img, geom.mask(config.side))
}

fn image_id(class: &str, index: usize) -> String {
    format!("{class}-{index:04}")
}

/// Writes every image under `out_dir/<class>/` and the manifest to
/// `out_dir/manifest.tsv`; returns the manifest.
pub fn generate_synthetic(config: &SyntheticConfig, out_dir: &Path) -> Result<DatasetManifest> {
    config.validate()?;
    let classes = config.class_names();
    for c in &classes {
        let dir = out_dir.join(c);
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    }
    let jobs: Vec<(usize, usize)> = (0..config.num_classes)
        .flat_map(|c| (0..config.per_class).map(move |i| (c, i)))
        .collect();
    let records: Vec<Record> = jobs
        .par_iter()
        .map(|&(c, i)| {
            let id = image_id(&classes[c], i);
            let rel = PathBuf::from(&classes[c]).join(format!("{id}.png"));
            let (img, _) = render(config, c, i);
            save_rgb(&img, &out_dir.join(&rel))?;
            Ok(Record {
                id,
                path: rel,
                class_name: classes[c].clone(),
                split: None,
            })
        })
        .collect::<Result<_>>()?;
    let mut manifest = split_manifest(&records, &classes, config.fractions, config.seed, out_dir.to_path_buf())?;
    if config.label_noise > 0.0 {
        let mut r = rng::stream(config.seed, &[tag::LABEL_NOISE]);
        for rec in manifest.records.iter_mut().filter(|r| r.split == Some(Split::Train)) {
            if r.random::<f64>() < config.label_noise {
                rec.class_name = classes[r.random_range(0..classes.len())].clone();
            }
        }
    }
    manifest.write(&out_dir.join("manifest.tsv"))?;
    Ok(manifest)
}
