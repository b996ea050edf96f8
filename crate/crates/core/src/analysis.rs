//! Embedding distance versus defect area.
//!
//! Nested CutPaste rectangles of growing area share one destination centre
//! (the deepest foreground point) and one source centre, so each larger
//! defect contains the smaller ones. The distance is the same element-mean
//! squared error used as the training loss.

use serde::Serialize;

use crate::embedding::{EncodeSource, Provider};
use crate::error::{Error, Result};
use crate::raster::RgbImage;
use crate::rng::SplitMix64;
use crate::synthesis::{binarize_foreground, deepest_foreground_point, paste_patch, rect_sides};
use crate::training::manifold_loss;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DistancePoint {
    pub ratio: f64,
    pub anomaly_pixels: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceSeries {
    pub points: Vec<DistancePoint>,
}

impl DistanceSeries {
    pub fn from_pairs(pairs: &[(usize, f64)]) -> Self {
        Self {
            points: pairs
                .iter()
                .map(|&(anomaly_pixels, distance)| DistancePoint {
                    ratio: f64::NAN,
                    anomaly_pixels,
                    distance,
                })
                .collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("# distance = mean over all N*dim elements of (f_s - f_r)^2\npixel_count,distance\n");
        for p in &self.points {
            s.push_str(&format!("{},{}\n", p.anomaly_pixels, p.distance));
        }
        s
    }
}

/// Distance between the clean and corrupted embeddings for each area ratio.
/// A ratio of exactly 0 pastes nothing.
pub fn distance_vs_area(image: &RgbImage, provider: &Provider, ratios: &[f64], seed: u64) -> Result<DistanceSeries> {
    if ratios.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("area ratios must be strictly increasing".into()));
    }
    if ratios.iter().any(|&r| !(0.0..1.0).contains(&r)) {
        return Err(Error::Config("area ratios must lie in [0, 1)".into()));
    }
    let (w, h) = (image.width, image.height);
    let f_r = provider.encode(EncodeSource::Novel(image))?;
    let fg = binarize_foreground(image);
    let center = deepest_foreground_point(&fg.mask);
    // The source centre leaves room for the largest rectangle, so every
    // ratio copies from the same offset relative to the destination.
    let max_ratio = ratios.last().copied().unwrap_or(0.0);
    let (mw, mh) = rect_sides(max_ratio * (w * h) as f64, 1.0);
    if mw > w || mh > h {
        return Err(Error::AreaTooLarge {
            w: mw,
            h: mh,
            width: w,
            height: h,
        });
    }
    let mut rng = SplitMix64::new(seed);
    let src_center = (
        mw / 2 + rng.below((w - mw + 1) as u64) as usize,
        mh / 2 + rng.below((h - mh + 1) as u64) as usize,
    );

    let mut points = Vec::with_capacity(ratios.len());
    for &ratio in ratios {
        if ratio == 0.0 {
            points.push(DistancePoint {
                ratio,
                anomaly_pixels: 0,
                distance: 0.0,
            });
            continue;
        }
        let (rw, rh) = rect_sides(ratio * (w * h) as f64, 1.0);
        let (sx, sy) = (src_center.0 - rw / 2, src_center.1 - rh / 2);
        let syn = paste_patch(image, (sx, sy, rw, rh), center, 0)?;
        let f_s = provider.encode(EncodeSource::Novel(&syn.image))?;
        points.push(DistancePoint {
            ratio,
            anomaly_pixels: syn.geometry.anomaly_pixels,
            distance: manifold_loss(&f_s, &f_r)?,
        });
    }
    if points.windows(2).any(|p| p[1].anomaly_pixels <= p[0].anomaly_pixels) {
        return Err(Error::Config(
            "nested rectangles do not grow strictly; use more widely spaced ratios".into(),
        ));
    }
    Ok(DistanceSeries { points })
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && values[idx[j]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Spearman's ρ between pixel count and distance (Pearson on average ranks).
pub fn spearman(series: &DistanceSeries) -> Result<f64> {
    if series.points.len() < 3 {
        return Err(Error::MetricUndefined("Spearman correlation needs at least 3 points"));
    }
    let xs: Vec<f64> = series.points.iter().map(|p| p.anomaly_pixels as f64).collect();
    let ys: Vec<f64> = series.points.iter().map(|p| p.distance).collect();
    let (rx, ry) = (average_ranks(&xs), average_ranks(&ys));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::MetricUndefined("Spearman correlation of a constant series"));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::ProviderSpec;

    #[test]
    fn monotone_series() {
        let up = DistanceSeries::from_pairs(&[(1, 0.1), (2, 0.5), (3, 0.7), (4, 2.0)]);
        assert!((spearman(&up).unwrap() - 1.0).abs() < 1e-12);
        let down = DistanceSeries::from_pairs(&[(1, 3.0), (2, 2.0), (3, 1.0)]);
        assert!((spearman(&down).unwrap() + 1.0).abs() < 1e-12);
        assert!(spearman(&DistanceSeries::from_pairs(&[(1, 1.0), (2, 2.0)])).is_err());
    }

    #[test]
    fn tie_matches_hand_ranks() {
        // distances 0.2, 0.5, 0.5, 0.9 -> ranks 1, 2.5, 2.5, 4 against 1..4.
        // Pearson on those ranks: sxy = 4.5, sxx = 5, syy = 4.5 -> 4.5/sqrt(22.5).
        let s = DistanceSeries::from_pairs(&[(1, 0.2), (2, 0.5), (3, 0.5), (4, 0.9)]);
        let want = 4.5 / (5.0f64 * 4.5).sqrt();
        assert!((spearman(&s).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn zero_ratio_is_zero_and_series_reproducible() {
        let img = crate::procedural::texture(1, 64, 64, 0.0, 3);
        let p = Provider::new(ProviderSpec::Toy {
            dim: 16,
            patch_size: 16,
            weight_seed: 2,
        })
        .unwrap();
        let ratios = [0.0, 0.02, 0.05, 0.1];
        let a = distance_vs_area(&img, &p, &ratios, 4).unwrap();
        assert_eq!(a.points[0].distance, 0.0);
        assert_eq!(a, distance_vs_area(&img, &p, &ratios, 4).unwrap());
        assert!(distance_vs_area(&img, &p, &[0.1, 0.05], 4).is_err());
    }
}
