//! Anomaly scoring: per-patch projection displacement, Top-K image score,
//! and the upsampled pixel heatmap.

use std::path::Path;

use crate::embedding::{EncodeSource, PatchGrid, Provider};
use crate::error::{Error, Result};
use crate::projector::{forward, ProjectorParams};
use crate::raster::resize_bilinear;

/// Non-negative per-patch scores, `gh × gw` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    pub gh: usize,
    pub gw: usize,
    pub data: Vec<f32>,
}

/// Pixel-resolution anomaly map.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageScore {
    pub value: f64,
    pub k_used: usize,
}

/// `s_i = (1/dim) Σ_c (f*_{i,c} - f_{i,c})²` for every patch `i`.
pub fn patch_scores(f_a: &PatchGrid, f_a_star: &PatchGrid) -> Result<ScoreMap> {
    f_a.check_same_shape(f_a_star)?;
    let dim = f_a.dim;
    let data = f_a
        .data
        .chunks_exact(dim)
        .zip(f_a_star.data.chunks_exact(dim))
        .map(|(a, b)| {
            let s: f64 = a
                .iter()
                .zip(b)
                .map(|(&x, &y)| {
                    let d = y as f64 - x as f64;
                    d * d
                })
                .sum();
            (s / dim as f64) as f32
        })
        .collect();
    Ok(ScoreMap {
        gh: f_a.gh,
        gw: f_a.gw,
        data,
    })
}

/// Mean of the `min(k, N)` largest patch scores.
pub fn image_score(map: &ScoreMap, k: usize) -> Result<ImageScore> {
    if k == 0 {
        return Err(Error::Config("top-k needs k >= 1".into()));
    }
    if map.data.is_empty() {
        return Err(Error::Shape("empty score map".into()));
    }
    let mut v = map.data.clone();
    v.sort_by(|a, b| b.total_cmp(a));
    let k_used = k.min(v.len());
    let value = v[..k_used].iter().map(|&s| s as f64).sum::<f64>() / k_used as f64;
    Ok(ImageScore { value, k_used })
}

/// Half-pixel-centre bilinear upsampling to `height × width`.
pub fn upsample_heatmap(map: &ScoreMap, height: usize, width: usize) -> Result<Heatmap> {
    if height < map.gh || width < map.gw {
        return Err(Error::Shape(format!(
            "heatmap {height}x{width} smaller than score map {}x{}",
            map.gh, map.gw
        )));
    }
    Ok(Heatmap {
        width,
        height,
        data: resize_bilinear(&map.data, map.gw, map.gh, 1, width, height),
    })
}

/// Separable Gaussian blur with clamp-to-edge borders; kernel radius `ceil(4σ)`.
pub fn gaussian_smooth(h: &Heatmap, sigma: f32) -> Heatmap {
    if sigma <= 0.0 {
        return h.clone();
    }
    let radius = (4.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f32 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= norm);
    let (w, ht) = (h.width as isize, h.height as isize);
    let pass = |src: &[f32], horizontal: bool| -> Vec<f32> {
        let mut out = vec![0.0f32; src.len()];
        for y in 0..ht {
            for x in 0..w {
                let mut acc = 0.0;
                for (t, &kv) in kernel.iter().enumerate() {
                    let o = t as isize - radius;
                    let (sx, sy) = if horizontal {
                        ((x + o).clamp(0, w - 1), y)
                    } else {
                        (x, (y + o).clamp(0, ht - 1))
                    };
                    acc += kv * src[(sy * w + sx) as usize];
                }
                out[(y * w + x) as usize] = acc;
            }
        }
        out
    };
    let tmp = pass(&h.data, true);
    Heatmap {
        width: h.width,
        height: h.height,
        data: pass(&tmp, false),
    }
}

impl Heatmap {
    /// 16-bit grayscale PNG after per-image min-max normalization (export only).
    pub fn save_png16(&self, path: &Path) -> Result<()> {
        let (lo, hi) = self
            .data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let span = if hi > lo { hi - lo } else { 1.0 };
        let raw: Vec<u16> = self
            .data
            .iter()
            .map(|&v| (((v - lo) / span).clamp(0.0, 1.0) * 65535.0).round() as u16)
            .collect();
        image::ImageBuffer::<image::Luma<u16>, _>::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions")
            .save(path)
            .map_err(|e| Error::Decode {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
    }

    pub fn to_tensor(&self) -> crate::tensor::Tensor {
        crate::tensor::Tensor {
            dims: vec![self.height, self.width],
            data: self.data.clone(),
        }
    }

    pub fn from_tensor(t: crate::tensor::Tensor) -> Result<Self> {
        match t.dims[..] {
            [height, width] => Ok(Heatmap {
                width,
                height,
                data: t.data,
            }),
            _ => Err(Error::Shape(format!("heatmap needs a rank-2 tensor, got {:?}", t.dims))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScoreOptions {
    pub top_k: usize,
    /// Gaussian σ in pixels; `None` leaves the heatmap unsmoothed.
    pub smooth: Option<f32>,
}

#[derive(Debug, Clone)]
pub struct Scored {
    pub score: ImageScore,
    pub map: ScoreMap,
    pub heatmap: Heatmap,
}

/// encode → project → patch scores → (Top-K score, heatmap at `height × width`).
pub fn score_image(
    params: &ProjectorParams<f32>,
    provider: &Provider,
    source: EncodeSource<'_>,
    height: usize,
    width: usize,
    options: &ScoreOptions,
) -> Result<Scored> {
    let f_a = provider.encode(source)?;
    if f_a.dim != params.config.dim {
        return Err(Error::Shape(format!(
            "provider dim {} but projector dim {}",
            f_a.dim, params.config.dim
        )));
    }
    let f_star = forward(params, &f_a)?;
    let map = patch_scores(&f_a, &f_star)?;
    let score = image_score(&map, options.top_k)?;
    let mut heatmap = upsample_heatmap(&map, height, width)?;
    if let Some(sigma) = options.smooth {
        heatmap = gaussian_smooth(&heatmap, sigma);
    }
    Ok(Scored { score, map, heatmap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn map(gh: usize, gw: usize, data: &[f32]) -> ScoreMap {
        ScoreMap {
            gh,
            gw,
            data: data.to_vec(),
        }
    }

    #[test]
    fn identical_grids_score_zero() {
        let g = PatchGrid::new(2, 2, 3, (0..12).map(|i| i as f32).collect()).unwrap();
        assert!(patch_scores(&g, &g).unwrap().data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_coordinate_displacement() {
        let a = PatchGrid::zeros(2, 3, 8);
        let mut b = a.clone();
        b.data[4 * 8 + 5] = 1.0;
        let m = patch_scores(&a, &b).unwrap();
        for (i, &v) in m.data.iter().enumerate() {
            assert_eq!(v, if i == 4 { 1.0 / 8.0 } else { 0.0 });
        }
    }

    #[test]
    fn patch_scores_match_scalar_oracle() {
        let mut r = SplitMix64::new(8);
        let a = PatchGrid::new(3, 2, 5, (0..30).map(|_| r.normal() as f32).collect()).unwrap();
        let b = PatchGrid::new(3, 2, 5, (0..30).map(|_| r.normal() as f32).collect()).unwrap();
        let m = patch_scores(&a, &b).unwrap();
        for i in 0..6 {
            let mut s = 0.0f64;
            for c in 0..5 {
                s += ((b.data[i * 5 + c] - a.data[i * 5 + c]) as f64).powi(2);
            }
            assert!((m.data[i] as f64 - s / 5.0).abs() < 1e-6);
        }
    }

    #[test]
    fn top_k_cases() {
        let m = map(2, 2, &[5.0, 1.0, 3.0, 2.0]);
        assert_eq!(image_score(&m, 1).unwrap().value, 5.0);
        assert_eq!(image_score(&m, 2).unwrap().value, 4.0);
        assert_eq!(image_score(&m, 4).unwrap().value, 2.75);
        let s = image_score(&m, 10).unwrap();
        assert_eq!((s.value, s.k_used), (2.75, 4));
        assert!(image_score(&m, 0).is_err());
    }

    #[test]
    fn upsample_cases() {
        let c = upsample_heatmap(&map(2, 3, &[0.7; 6]), 20, 30).unwrap();
        assert!(c.data.iter().all(|&v| (v - 0.7).abs() < 1e-6));
        let one = upsample_heatmap(&map(1, 1, &[2.5]), 7, 5).unwrap();
        assert!(one.data.iter().all(|&v| v == 2.5));
        let zero = upsample_heatmap(&map(2, 2, &[0.0; 4]), 9, 9).unwrap();
        assert!(zero.data.iter().all(|&v| v == 0.0));
        assert!(upsample_heatmap(&map(4, 4, &[0.0; 16]), 2, 8).is_err());
    }

    #[test]
    fn upsample_2x2_checker_by_hand() {
        // Taps along each axis at src = (d + 0.5)/2 - 0.5, clamped:
        // 0, 0.25, 0.75, 1 -> weights on the second source sample.
        let h = upsample_heatmap(&map(2, 2, &[0.0, 1.0, 1.0, 0.0]), 4, 4).unwrap();
        let f = [0.0f32, 0.25, 0.75, 1.0];
        for y in 0..4 {
            for x in 0..4 {
                let (fx, fy) = (f[x], f[y]);
                let want = (1.0 - fy) * fx + fy * (1.0 - fx);
                assert!((h.data[y * 4 + x] - want).abs() < 1e-6);
            }
        }
        assert_eq!(h.data[0], 0.0);
        assert!((h.data[1] - 0.25).abs() < 1e-7);
        assert!((h.data[5] - 0.375).abs() < 1e-7);
    }

    #[test]
    fn smoothing_preserves_constants() {
        let h = Heatmap {
            width: 6,
            height: 4,
            data: vec![1.5; 24],
        };
        let s = gaussian_smooth(&h, 1.2);
        assert!(s.data.iter().all(|&v| (v - 1.5).abs() < 1e-5));
    }
}
