//! Minimal raster types and the two resampling kernels used across the
//! pipeline (half-pixel-centre bilinear for intensities, nearest for masks).

use std::path::Path;

use crate::error::{Error, Result};

/// Row-major `height × width × 3` image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, p: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&p);
    }

    /// Channel-mean grayscale plane.
    pub fn gray(&self) -> Vec<f32> {
        self.data
            .chunks_exact(3)
            .map(|p| (p[0] + p[1] + p[2]) / 3.0)
            .collect()
    }

    pub fn resize_bilinear(&self, width: usize, height: usize) -> RgbImage {
        RgbImage {
            width,
            height,
            data: resize_bilinear(&self.data, self.width, self.height, 3, width, height),
        }
    }

    /// Decode any 8-bit image; grayscale is promoted by channel replication.
    pub fn load(path: &Path) -> Result<RgbImage> {
        let img = image::open(path).map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        Ok(RgbImage {
            width: w as usize,
            height: h as usize,
            data: rgb.as_raw().iter().map(|&v| v as f32 / 255.0).collect(),
        })
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let raw = self.data.iter().map(|&v| quantize(v)).collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions")
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8().save(path).map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

#[inline]
pub(crate) fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary `height × width` mask stored as bytes in `{0, 1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn filled(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![1; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.data[y * self.width + x] = on as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// Grayscale decode, thresholded at 127/255.
    pub fn load(path: &Path) -> Result<Mask> {
        let img = image::open(path).map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let luma = img.to_luma8();
        let (w, h) = luma.dimensions();
        Ok(Mask {
            width: w as usize,
            height: h as usize,
            data: luma.as_raw().iter().map(|&v| (v > 127) as u8).collect(),
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let raw = self.data.iter().map(|&v| if v != 0 { 255 } else { 0 }).collect();
        image::GrayImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions")
            .save(path)
            .map_err(|e| Error::Decode {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
    }

    pub fn resize_nearest(&self, width: usize, height: usize) -> Mask {
        let mut out = Mask::new(width, height);
        for y in 0..height {
            let sy = nearest_index(y, self.height, height);
            for x in 0..width {
                let sx = nearest_index(x, self.width, width);
                out.data[y * width + x] = self.data[sy * self.width + sx];
            }
        }
        out
    }
}

#[inline]
fn nearest_index(dst: usize, src_len: usize, dst_len: usize) -> usize {
    let s = ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64).floor() as usize;
    s.min(src_len - 1)
}

/// Sample position and weight along one axis for half-pixel-centre bilinear
/// resampling: `src = (dst + 0.5) * in / out - 0.5`, clamped to the valid
/// range, returning `(lo, hi, frac)`.
#[inline]
pub fn bilinear_tap(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f32) {
    let scale = src_len as f64 / dst_len as f64;
    let s = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
    let lo = s.floor() as usize;
    let hi = (lo + 1).min(src_len - 1);
    (lo, hi, (s - lo as f64) as f32)
}

/// Half-pixel-centre bilinear resize of an interleaved `src_h × src_w × channels` buffer.
pub fn resize_bilinear(
    src: &[f32],
    src_w: usize,
    src_h: usize,
    channels: usize,
    dst_w: usize,
    dst_h: usize,
) -> Vec<f32> {
    assert_eq!(src.len(), src_w * src_h * channels);
    if src_w == dst_w && src_h == dst_h {
        return src.to_vec();
    }
    let xs: Vec<_> = (0..dst_w).map(|x| bilinear_tap(x, src_w, dst_w)).collect();
    let mut out = vec![0.0f32; dst_w * dst_h * channels];
    for y in 0..dst_h {
        let (y0, y1, fy) = bilinear_tap(y, src_h, dst_h);
        let row0 = &src[y0 * src_w * channels..(y0 + 1) * src_w * channels];
        let row1 = &src[y1 * src_w * channels..(y1 + 1) * src_w * channels];
        let orow = &mut out[y * dst_w * channels..(y + 1) * dst_w * channels];
        for (x, &(x0, x1, fx)) in xs.iter().enumerate() {
            for c in 0..channels {
                let a = row0[x0 * channels + c] * (1.0 - fx) + row0[x1 * channels + c] * fx;
                let b = row1[x0 * channels + c] * (1.0 - fx) + row1[x1 * channels + c] * fx;
                orow[x * channels + c] = a * (1.0 - fy) + b * fy;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkerboard_4_to_8_matches_hand_weights() {
        // 4x4 checkerboard, 1 where (x + y) is odd.
        let src: Vec<f32> = (0..16).map(|i| ((i % 4 + i / 4) % 2) as f32).collect();
        let out = resize_bilinear(&src, 4, 4, 1, 8, 8);
        // Scale 1/2: dst x maps to src (x + 0.5) / 2 - 0.5, i.e. taps at
        // -0.25 (clamped to 0), 0.25, 0.75, 1.25, ..., 3.25 (clamped to 3).
        // Along a row the fractional weights alternate 0.75/0.25 and 0.25/0.75.
        let axis = |d: usize| -> (usize, usize, f32) {
            let s: f32 = (d as f32 + 0.5) / 2.0 - 0.5;
            let s = s.clamp(0.0, 3.0);
            let lo = s.floor() as usize;
            (lo, (lo + 1).min(3), s - lo as f32)
        };
        for y in 0..8 {
            for x in 0..8 {
                let (y0, y1, fy) = axis(y);
                let (x0, x1, fx) = axis(x);
                let v = |xx: usize, yy: usize| ((xx + yy) % 2) as f32;
                let want = (1.0 - fy) * ((1.0 - fx) * v(x0, y0) + fx * v(x1, y0))
                    + fy * ((1.0 - fx) * v(x0, y1) + fx * v(x1, y1));
                assert!((out[y * 8 + x] - want).abs() < 1e-6, "({x},{y})");
            }
        }
        // Spot values computed by hand: corner is clamped to the source
        // corner (0); (1,0) mixes 0.75*v(0,0)+0.25*v(1,0) = 0.25;
        // (1,1) = 0.75*0.75*0 + 2*0.75*0.25*1 + 0.25*0.25*0 = 0.375.
        assert_eq!(out[0], 0.0);
        assert!((out[1] - 0.25).abs() < 1e-6);
        assert!((out[9] - 0.375).abs() < 1e-6);
    }

    #[test]
    fn constant_field_stays_constant() {
        let src = vec![0.3f32; 7 * 5 * 3];
        let out = resize_bilinear(&src, 7, 5, 3, 19, 11);
        assert!(out.iter().all(|&v| (v - 0.3).abs() < 1e-6));
    }

    #[test]
    fn identity_resize_is_exact() {
        let src: Vec<f32> = (0..48).map(|i| i as f32 / 47.0).collect();
        assert_eq!(resize_bilinear(&src, 4, 4, 3, 4, 4), src);
    }

    #[test]
    fn nearest_mask_resize_stays_binary() {
        let mut m = Mask::new(5, 3);
        m.set(1, 1, true);
        m.set(4, 2, true);
        let r = m.resize_nearest(17, 9);
        assert!(r.data.iter().all(|&v| v <= 1));
        assert!(r.count() > 0);
    }
}
