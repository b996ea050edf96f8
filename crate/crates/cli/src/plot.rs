//! Minimal scatter plot emitter: axes and dots, no text.

use std::path::Path;

use anyhow::{Context, Result};
use image::{Rgb, RgbImage};

const WIDTH: u32 = 480;
const HEIGHT: u32 = 360;
const MARGIN: u32 = 30;

pub fn scatter_png(path: &Path, points: &[(f64, f64)]) -> Result<()> {
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));
    let axis = Rgb([40, 40, 40]);
    for x in MARGIN..WIDTH - MARGIN / 2 {
        img.put_pixel(x, HEIGHT - MARGIN, axis);
    }
    for y in MARGIN / 2..=HEIGHT - MARGIN {
        img.put_pixel(MARGIN, y, axis);
    }
    let max_of = |f: fn(&(f64, f64)) -> f64| points.iter().map(f).fold(0.0f64, f64::max).max(f64::MIN_POSITIVE);
    let (xmax, ymax) = (max_of(|p| p.0), max_of(|p| p.1));
    let (pw, ph) = ((WIDTH - MARGIN * 2) as f64, (HEIGHT - MARGIN * 2) as f64);
    for &(x, y) in points {
        let cx = MARGIN as f64 + x / xmax * pw;
        let cy = (HEIGHT - MARGIN) as f64 - y / ymax * ph;
        for dy in -2i32..=2 {
            for dx in -2i32..=2 {
                let (px, py) = (cx as i32 + dx, cy as i32 + dy);
                if px >= 0 && py >= 0 && (px as u32) < WIDTH && (py as u32) < HEIGHT {
                    img.put_pixel(px as u32, py as u32, Rgb([200, 40, 40]));
                }
            }
        }
    }
    img.save(path).with_context(|| format!("writing {}", path.display()))
}
