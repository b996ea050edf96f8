//! Image- and pixel-level detection metrics: AUROC, AUPR, and the
//! per-region-overlap (PRO) curve integrated up to an FPR cap.
//!
//! Ties are handled deterministically everywhere: average ranks for AUROC,
//! grouped thresholds for the curve sweeps.

use std::cmp::Ordering;
use std::collections::VecDeque;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::raster::Mask;

pub const DEFAULT_FPR_CAP: f64 = 0.3;
pub const DEFAULT_PRO_THRESHOLDS: usize = 200;

/// Scores with binary labels (`true` = anomalous).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoredSet {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} scores but {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::Shape("NaN score".into()));
        }
        Ok(Self { scores, labels })
    }

    pub fn push(&mut self, score: f64, label: bool) {
        self.scores.push(score);
        self.labels.push(label);
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    fn descending_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.scores.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].partial_cmp(&self.scores[a]).unwrap_or(Ordering::Equal));
        idx
    }

    /// `(fp, tp)` after each tie group in a descending sweep.
    fn tie_groups(&self) -> Vec<(usize, usize)> {
        let idx = self.descending_order();
        let mut out = Vec::new();
        let (mut fp, mut tp) = (0, 0);
        for (k, &i) in idx.iter().enumerate() {
            if self.labels[i] {
                tp += 1;
            } else {
                fp += 1;
            }
            let last_of_group = k + 1 == idx.len() || self.scores[idx[k + 1]] != self.scores[i];
            if last_of_group {
                out.push((fp, tp));
            }
        }
        out
    }
}

/// Mann-Whitney AUROC with average ranks for ties.
pub fn auroc(set: &ScoredSet) -> Result<f64> {
    let pos = set.positives();
    let neg = set.labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::AurocUndefined("needs both positive and negative samples"));
    }
    let mut idx: Vec<usize> = (0..set.scores.len()).collect();
    idx.sort_by(|&a, &b| set.scores[a].partial_cmp(&set.scores[b]).unwrap_or(Ordering::Equal));
    let mut rank_sum_pos = 0.0f64;
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && set.scores[idx[end]] == set.scores[idx[start]] {
            end += 1;
        }
        // Ranks are 1-based; the group spans start+1 ..= end.
        let avg = (start + 1 + end) as f64 / 2.0;
        let pos_in_group = idx[start..end].iter().filter(|&&i| set.labels[i]).count();
        rank_sum_pos += avg * pos_in_group as f64;
        start = end;
    }
    let u = rank_sum_pos - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// ROC points `(fpr, tpr)` starting at `(0, 0)`, one per tie group.
pub fn roc_curve(set: &ScoredSet) -> Result<Vec<(f64, f64)>> {
    let pos = set.positives();
    let neg = set.labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::AurocUndefined("needs both positive and negative samples"));
    }
    let mut pts = vec![(0.0, 0.0)];
    pts.extend(
        set.tie_groups()
            .into_iter()
            .map(|(fp, tp)| (fp as f64 / neg as f64, tp as f64 / pos as f64)),
    );
    Ok(pts)
}

/// Trapezoid area of a monotone-in-x curve from 0 to `cap`, interpolating
/// linearly at the crossing, divided by `cap`.
pub fn normalized_area_to(points: &[(f64, f64)], cap: f64) -> f64 {
    let mut area = 0.0;
    for pair in points.windows(2) {
        let ((x0, y0), (x1, y1)) = (pair[0], pair[1]);
        if x0 >= cap {
            break;
        }
        if x1 <= cap {
            area += (x1 - x0) * (y0 + y1) / 2.0;
        } else {
            let y_cap = y0 + (y1 - y0) * (cap - x0) / (x1 - x0);
            area += (cap - x0) * (y0 + y_cap) / 2.0;
            break;
        }
    }
    area / cap
}

/// AUROC restricted to `fpr <= cap`, normalized by `cap`.
pub fn capped_auroc(set: &ScoredSet, cap: f64) -> Result<f64> {
    if !(cap > 0.0 && cap <= 1.0) {
        return Err(Error::Config(format!("fpr cap {cap} outside (0, 1]")));
    }
    Ok(normalized_area_to(&roc_curve(set)?, cap))
}

/// Step-wise average precision: sum over tie groups of precision times the
/// recall increment, sweeping scores downwards.
pub fn aupr(set: &ScoredSet) -> Result<f64> {
    let pos = set.positives();
    if pos == 0 {
        return Err(Error::MetricUndefined("AUPR needs at least one positive"));
    }
    let mut area = 0.0;
    let mut prev_tp = 0;
    for (fp, tp) in set.tie_groups() {
        if tp > prev_tp {
            let precision = tp as f64 / (tp + fp) as f64;
            area += precision * (tp - prev_tp) as f64 / pos as f64;
            prev_tp = tp;
        }
    }
    Ok(area)
}

/// 8-connected labeling. Labels run `1..=count` in first-encounter raster
/// order; background is 0.
pub fn connected_components(mask: &Mask) -> (Vec<u32>, usize) {
    let (w, h) = (mask.width, mask.height);
    let mut labels = vec![0u32; w * h];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if mask.data[start] == 0 || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            for ny in y.saturating_sub(1)..(y + 2).min(h) {
                for nx in x.saturating_sub(1)..(x + 2).min(w) {
                    let j = ny * w + nx;
                    if mask.data[j] != 0 && labels[j] == 0 {
                        labels[j] = next;
                        queue.push_back(j);
                    }
                }
            }
        }
    }
    (labels, next as usize)
}

/// Per-image raw score maps and the matching ground-truth masks.
#[derive(Debug, Clone, Default)]
pub struct ProInput {
    pub heatmaps: Vec<Vec<f32>>,
    pub masks: Vec<Mask>,
}

impl ProInput {
    pub fn push(&mut self, heatmap: Vec<f32>, mask: Mask) -> Result<()> {
        if heatmap.len() != mask.data.len() {
            return Err(Error::Shape(format!(
                "heatmap has {} pixels, mask {}x{}",
                heatmap.len(),
                mask.width,
                mask.height
            )));
        }
        self.heatmaps.push(heatmap);
        self.masks.push(mask);
        Ok(())
    }

    pub fn pixel_set(&self) -> ScoredSet {
        let n: usize = self.heatmaps.iter().map(Vec::len).sum();
        let mut set = ScoredSet {
            scores: Vec::with_capacity(n),
            labels: Vec::with_capacity(n),
        };
        for (hm, m) in self.heatmaps.iter().zip(&self.masks) {
            set.scores.extend(hm.iter().map(|&v| v as f64));
            set.labels.extend(m.data.iter().map(|&v| v != 0));
        }
        set
    }
}

/// AUROC over every pixel pooled across images (full curve).
pub fn pixel_auroc(input: &ProInput) -> Result<f64> {
    auroc(&input.pixel_set())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdSweep {
    /// `n` equally spaced thresholds from the pooled max down to the pooled min.
    Linear(usize),
    /// Every distinct score, descending.
    Exact,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProCurve {
    /// `(fpr, pro)` pairs, starting at `(0, 0)`.
    pub points: Vec<(f64, f64)>,
    pub value: f64,
}

/// PRO: at each threshold `t` (a pixel is predicted anomalous when
/// `score >= t`) take the mean over ground-truth regions of the covered
/// fraction, against the FPR over normal pixels; integrate up to `fpr_cap`
/// and normalize by it.
pub fn pro(input: &ProInput, fpr_cap: f64, sweep: ThresholdSweep) -> Result<ProCurve> {
    if !(fpr_cap > 0.0 && fpr_cap <= 1.0) {
        return Err(Error::Config(format!("fpr cap {fpr_cap} outside (0, 1]")));
    }
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for v in input.heatmaps.iter().flatten() {
        if v.is_nan() {
            return Err(Error::Shape("NaN in heatmap".into()));
        }
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    let thresholds: Vec<f64> = match sweep {
        ThresholdSweep::Linear(n) => {
            if n == 0 {
                return Err(Error::Config("need at least one threshold".into()));
            }
            let (lo, hi) = (lo as f64, hi as f64);
            if n == 1 || hi == lo {
                vec![lo]
            } else {
                let step = (hi - lo) / (n - 1) as f64;
                (0..n)
                    .map(|i| if i == n - 1 { lo } else { hi - i as f64 * step })
                    .collect()
            }
        }
        ThresholdSweep::Exact => {
            let mut all: Vec<f64> = input.heatmaps.iter().flatten().map(|&v| v as f64).collect();
            all.sort_by(|a, b| b.partial_cmp(a).unwrap());
            all.dedup();
            all
        }
    };

    // Region sizes and per-threshold histograms of first inclusion.
    let t = thresholds.len();
    let first_index = |s: f64| thresholds.partition_point(|&th| th > s);
    let mut region_sizes = Vec::new();
    let mut region_hist: Vec<Vec<u64>> = Vec::new();
    let mut normal_hist = vec![0u64; t + 1];
    let mut normal_total = 0u64;
    for (hm, mask) in input.heatmaps.iter().zip(&input.masks) {
        let (labels, count) = connected_components(mask);
        let base = region_sizes.len();
        region_sizes.resize(base + count, 0u64);
        region_hist.resize(base + count, vec![0u64; t + 1]);
        for (&s, &l) in hm.iter().zip(&labels) {
            let k = first_index(s as f64);
            if l == 0 {
                normal_hist[k] += 1;
                normal_total += 1;
            } else {
                let r = base + l as usize - 1;
                region_sizes[r] += 1;
                region_hist[r][k] += 1;
            }
        }
    }
    if region_sizes.is_empty() {
        return Err(Error::MetricUndefined("PRO needs at least one ground-truth region"));
    }
    if normal_total == 0 {
        return Err(Error::MetricUndefined("PRO needs at least one normal pixel"));
    }

    let mut points = Vec::with_capacity(t + 1);
    points.push((0.0, 0.0));
    let mut fp = 0u64;
    let mut covered = vec![0u64; region_sizes.len()];
    for k in 0..t {
        fp += normal_hist[k];
        let mut overlap = 0.0;
        for (r, c) in covered.iter_mut().enumerate() {
            *c += region_hist[r][k];
            overlap += *c as f64 / region_sizes[r] as f64;
        }
        points.push((fp as f64 / normal_total as f64, overlap / region_sizes.len() as f64));
    }
    let value = normalized_area_to(&points, fpr_cap);
    Ok(ProCurve { points, value })
}

/// One scored test image for [`evaluate`].
#[derive(Debug, Clone)]
pub struct EvalItem {
    pub category: String,
    pub anomalous: bool,
    pub score: f64,
    pub heatmap: Vec<f32>,
    /// Ground truth at heatmap resolution; `None` means all-normal.
    pub mask: Option<Mask>,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct CategoryMetrics {
    pub category: String,
    pub i_auroc: f64,
    pub aupr: f64,
    pub p_auroc: f64,
    pub p_auroc_capped: f64,
    pub pro: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub fpr_cap: f64,
    pub pro_thresholds: usize,
    /// Pooled over all categories.
    pub pooled: CategoryMetrics,
    /// Unweighted mean of the per-category values.
    pub mean: CategoryMetrics,
    pub per_category: Vec<CategoryMetrics>,
    /// Pooled image-level ROC points, downsampled.
    pub roc_samples: Vec<(f64, f64)>,
    /// Pooled PRO curve points, downsampled.
    pub pro_samples: Vec<(f64, f64)>,
}

/// Sampled `(x, y)` curve points.
type Curve = Vec<(f64, f64)>;

fn category_metrics(
    name: &str,
    items: &[&EvalItem],
    fpr_cap: f64,
    thresholds: usize,
) -> Result<(CategoryMetrics, Curve, Curve)> {
    let mut images = ScoredSet::default();
    let mut pixels = ProInput::default();
    for it in items {
        images.push(it.score, it.anomalous);
        let mask = it
            .mask
            .clone()
            .unwrap_or_else(|| Mask::new(it.width, it.height));
        pixels.push(it.heatmap.clone(), mask)?;
    }
    let pixel_set = pixels.pixel_set();
    let pro_curve = pro(&pixels, fpr_cap, ThresholdSweep::Linear(thresholds))?;
    let m = CategoryMetrics {
        category: name.to_string(),
        i_auroc: auroc(&images)?,
        aupr: aupr(&images)?,
        p_auroc: auroc(&pixel_set)?,
        p_auroc_capped: capped_auroc(&pixel_set, fpr_cap)?,
        pro: pro_curve.value,
    };
    Ok((m, roc_curve(&images)?, pro_curve.points))
}

fn downsample(points: &[(f64, f64)], max: usize) -> Vec<(f64, f64)> {
    if points.len() <= max {
        return points.to_vec();
    }
    let step = (points.len() - 1) as f64 / (max - 1) as f64;
    (0..max).map(|i| points[(i as f64 * step).round() as usize]).collect()
}

/// Full report: per category, pooled, and category mean.
pub fn evaluate(items: &[EvalItem], fpr_cap: f64, thresholds: usize) -> Result<MetricReport> {
    let mut names: Vec<&str> = items.iter().map(|i| i.category.as_str()).collect();
    names.sort();
    names.dedup();
    let mut per_category = Vec::new();
    for name in &names {
        let subset: Vec<&EvalItem> = items.iter().filter(|i| i.category == *name).collect();
        per_category.push(category_metrics(name, &subset, fpr_cap, thresholds)?.0);
    }
    let all: Vec<&EvalItem> = items.iter().collect();
    let (pooled, roc, pro_pts) = category_metrics("pooled", &all, fpr_cap, thresholds)?;
    let n = per_category.len() as f64;
    let mean_of = |f: fn(&CategoryMetrics) -> f64| per_category.iter().map(f).sum::<f64>() / n;
    let mean = CategoryMetrics {
        category: "mean".into(),
        i_auroc: mean_of(|m| m.i_auroc),
        aupr: mean_of(|m| m.aupr),
        p_auroc: mean_of(|m| m.p_auroc),
        p_auroc_capped: mean_of(|m| m.p_auroc_capped),
        pro: mean_of(|m| m.pro),
    };
    Ok(MetricReport {
        fpr_cap,
        pro_thresholds: thresholds,
        pooled,
        mean,
        per_category,
        roc_samples: downsample(&roc, 101),
        pro_samples: downsample(&pro_pts, 101),
    })
}

impl MetricReport {
    /// `category,i_auroc,aupr,p_auroc,pro` in percent with one decimal.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("category,i_auroc,aupr,p_auroc,pro\n");
        let rows = self.per_category.iter().chain([&self.mean, &self.pooled]);
        for m in rows {
            s.push_str(&format!(
                "{},{:.1},{:.1},{:.1},{:.1}\n",
                m.category,
                100.0 * m.i_auroc,
                100.0 * m.aupr,
                100.0 * m.p_auroc,
                100.0 * m.pro
            ));
        }
        s
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}
