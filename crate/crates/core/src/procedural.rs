//! Procedural textures and rectangle defects for desk-scale experiments.
//!
//! Each category index maps to a distinct parametric pattern with its own
//! colours. Normal images of a category share the pattern and differ only by
//! per-pixel noise; defects overwrite a random rectangle with foreign content.

use std::f32::consts::TAU;
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::{Mask, RgbImage};
use crate::rng::SplitMix64;

const PALETTE: [([f32; 3], [f32; 3]); 5] = [
    ([0.15, 0.25, 0.55], [0.85, 0.80, 0.35]),
    ([0.30, 0.15, 0.10], [0.90, 0.60, 0.40]),
    ([0.10, 0.40, 0.20], [0.70, 0.90, 0.65]),
    ([0.45, 0.45, 0.50], [0.95, 0.95, 0.90]),
    ([0.35, 0.10, 0.40], [0.80, 0.55, 0.85]),
];

/// Pattern value in `[0, 1]` for category `c` at pixel `(x, y)` of a `w × h` image.
fn pattern(c: usize, x: f32, y: f32, w: f32, h: f32) -> f32 {
    let (u, v) = (x / w, y / h);
    match c % 5 {
        0 => {
            let a = 0.6f32;
            0.5 + 0.5 * (TAU * 6.0 * (u * a.cos() + v * a.sin())).sin()
        }
        1 => {
            let k = 8.0;
            (((u * k).floor() + (v * k).floor()) as i32 % 2) as f32
        }
        2 => {
            let r = ((u - 0.5).powi(2) + (v - 0.5).powi(2)).sqrt();
            0.5 + 0.5 * (TAU * 7.0 * r).cos()
        }
        3 => {
            let k = 6.0;
            let (fx, fy) = ((u * k).fract() - 0.5, (v * k).fract() - 0.5);
            (-(fx * fx + fy * fy) / 0.03).exp()
        }
        _ => 0.5 + 0.5 * (TAU * 5.0 * u).sin() * (TAU * 3.0 * v).cos(),
    }
}

/// Normal image of category `category` with uniform noise of amplitude `noise`.
pub fn texture(category: usize, width: usize, height: usize, noise: f32, seed: u64) -> RgbImage {
    let (a, b) = PALETTE[category % PALETTE.len()];
    let mut rng = SplitMix64::new(seed);
    RgbImage::from_fn(width, height, |x, y| {
        let t = pattern(category, x as f32 + 0.5, y as f32 + 0.5, width as f32, height as f32);
        let mut px = [0.0; 3];
        for c in 0..3 {
            let n = if noise > 0.0 {
                noise * (2.0 * rng.next_f64() as f32 - 1.0)
            } else {
                0.0
            };
            px[c] = (a[c] + t * (b[c] - a[c]) + n).clamp(0.0, 1.0);
        }
        px
    })
}

/// Overwrite a random rectangle (sides 10 to 25 % of the image) with either a
/// solid colour, noise, or another category's pattern. Returns the mask.
pub fn add_rectangle_defect(image: &RgbImage, category: usize, rng: &mut SplitMix64) -> (RgbImage, Mask) {
    let (w, h) = (image.width, image.height);
    let rw = ((w as f64) * rng.uniform(0.10, 0.25)).round().max(1.0) as usize;
    let rh = ((h as f64) * rng.uniform(0.10, 0.25)).round().max(1.0) as usize;
    let x0 = rng.below((w - rw + 1) as u64) as usize;
    let y0 = rng.below((h - rh + 1) as u64) as usize;
    let kind = rng.below(3);
    let color = [rng.next_f64() as f32, rng.next_f64() as f32, rng.next_f64() as f32];
    let other = (category + 1 + rng.below(4) as usize) % 5;
    let mut out = image.clone();
    let mut mask = Mask::new(w, h);
    for y in y0..y0 + rh {
        for x in x0..x0 + rw {
            let px = match kind {
                0 => color,
                1 => [rng.next_f64() as f32, rng.next_f64() as f32, rng.next_f64() as f32],
                _ => {
                    let (a, b) = PALETTE[other];
                    let t = pattern(other, x as f32 * 1.7, y as f32 * 1.7, w as f32, h as f32);
                    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), a[2] + t * (b[2] - a[2])]
                }
            };
            out.set_pixel(x, y, px);
            mask.set(x, y, true);
        }
    }
    (out, mask)
}

#[derive(Debug, Clone)]
pub struct ToyDatasetSpec {
    pub categories: usize,
    pub train_per_category: usize,
    pub test_good_per_category: usize,
    pub test_bad_per_category: usize,
    pub size: usize,
    pub noise: f32,
    pub seed: u64,
}

impl Default for ToyDatasetSpec {
    fn default() -> Self {
        Self {
            categories: 5,
            train_per_category: 5,
            test_good_per_category: 20,
            test_bad_per_category: 20,
            size: 128,
            noise: 0.03,
            seed: 0,
        }
    }
}

pub fn category_name(c: usize) -> String {
    format!("texture{c}")
}

/// A labelled in-memory test image.
#[derive(Debug, Clone)]
pub struct ToySample {
    pub category: usize,
    pub image: RgbImage,
    pub mask: Option<Mask>,
}

/// In-memory toy data: `(train, test)` per the spec.
pub fn toy_dataset(spec: &ToyDatasetSpec) -> (Vec<ToySample>, Vec<ToySample>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..spec.categories {
        let base = spec.seed.wrapping_add((c as u64) << 32);
        for i in 0..spec.train_per_category {
            train.push(ToySample {
                category: c,
                image: texture(c, spec.size, spec.size, spec.noise, base + i as u64),
                mask: None,
            });
        }
        for i in 0..spec.test_good_per_category {
            test.push(ToySample {
                category: c,
                image: texture(c, spec.size, spec.size, spec.noise, base + 10_000 + i as u64),
                mask: None,
            });
        }
        for i in 0..spec.test_bad_per_category {
            let clean = texture(c, spec.size, spec.size, spec.noise, base + 20_000 + i as u64);
            let mut rng = SplitMix64::stream(base, 30_000 + i as u64);
            let (image, mask) = add_rectangle_defect(&clean, c, &mut rng);
            test.push(ToySample {
                category: c,
                image,
                mask: Some(mask),
            });
        }
    }
    (train, test)
}

/// Write the toy data as an MVTec-layout tree under `root`.
pub fn write_toy_dataset(root: &Path, spec: &ToyDatasetSpec) -> Result<()> {
    let (train, test) = toy_dataset(spec);
    let mkdir = |p: &Path| std::fs::create_dir_all(p).map_err(|e| Error::io(p, e));
    let mut counters = vec![(0usize, 0usize, 0usize); spec.categories];
    for s in &train {
        let dir = root.join(category_name(s.category)).join("train/good");
        mkdir(&dir)?;
        let n = &mut counters[s.category].0;
        s.image.save_png(&dir.join(format!("{:03}.png", *n)))?;
        *n += 1;
    }
    for s in &test {
        let cat = root.join(category_name(s.category));
        match &s.mask {
            None => {
                let dir = cat.join("test/good");
                mkdir(&dir)?;
                let n = &mut counters[s.category].1;
                s.image.save_png(&dir.join(format!("{:03}.png", *n)))?;
                *n += 1;
            }
            Some(mask) => {
                let dir = cat.join("test/rect");
                let gt = cat.join("ground_truth/rect");
                mkdir(&dir)?;
                mkdir(&gt)?;
                let n = &mut counters[s.category].2;
                s.image.save_png(&dir.join(format!("{:03}.png", *n)))?;
                mask.save_png(&gt.join(format!("{:03}_mask.png", *n)))?;
                *n += 1;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn categories_differ_and_stay_in_range() {
        let a = texture(0, 32, 32, 0.05, 1);
        let b = texture(1, 32, 32, 0.05, 1);
        assert_ne!(a, b);
        assert!(a.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn defect_mask_matches_changed_region() {
        let img = texture(2, 64, 64, 0.0, 0);
        let (d, m) = add_rectangle_defect(&img, 2, &mut SplitMix64::new(4));
        assert!(m.count() >= 36);
        for y in 0..64 {
            for x in 0..64 {
                if !m.get(x, y) {
                    assert_eq!(d.pixel(x, y), img.pixel(x, y));
                }
            }
        }
    }
}
