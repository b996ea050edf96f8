//! Gated-synthesis training of the projector with Adam.
//!
//! Each iteration draws a batch uniformly from the pooled few-shot images of
//! all categories (one model for every class), gates synthesis per image,
//! encodes both the gated image and the clean original with the same frozen
//! provider, and regresses `φ(f_s)` onto `f_r`.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetIndex, FewShotManifest};
use crate::embedding::{EncodeSource, PatchGrid, Provider};
use crate::error::{Error, Result};
use crate::projector::{init_projector, ProjectorConfig, ProjectorParams};
use crate::raster::RgbImage;
use crate::rng::SplitMix64;
use crate::synthesis::{binarize_foreground, gate_synthesis, ForegroundMask, SynthesisParams};

/// How the squared error is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LossReduction {
    /// Mean over all `N × dim` elements.
    #[default]
    ElementMean,
    /// Sum over channels, mean over the `N` patches.
    PatchSum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub sigma: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub data_seed: u64,
    /// Side length images are resized to before encoding.
    pub image_size: usize,
    pub synthesis: SynthesisParams,
    pub loss: LossReduction,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 1e-4,
            batch_size: 8,
            iterations: 1000,
            sigma: 0.5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            data_seed: 0,
            image_size: 512,
            synthesis: SynthesisParams::default(),
            loss: LossReduction::ElementMean,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0) {
            return bad(format!("lr {} must be positive", self.lr));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight decay {} must be >= 0", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam eps must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.sigma) {
            return bad(format!("sigma {} outside [0, 1]", self.sigma));
        }
        if self.image_size == 0 {
            return bad("image size must be positive".into());
        }
        self.synthesis.validate()
    }
}

/// Squared-error discrepancy between a projected grid and its reference.
pub fn manifold_loss(projected: &PatchGrid, reference: &PatchGrid) -> Result<f64> {
    manifold_loss_with(projected, reference, LossReduction::ElementMean)
}

pub fn manifold_loss_with(projected: &PatchGrid, reference: &PatchGrid, reduction: LossReduction) -> Result<f64> {
    projected.check_same_shape(reference)?;
    let sum: f64 = projected
        .data
        .iter()
        .zip(&reference.data)
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    Ok(sum / loss_denominator(projected, reduction))
}

fn loss_denominator(g: &PatchGrid, reduction: LossReduction) -> f64 {
    match reduction {
        LossReduction::ElementMean => (g.len() * g.dim) as f64,
        LossReduction::PatchSum => g.len() as f64,
    }
}

/// Adam moments, one buffer per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: ProjectorParams<f32>,
    pub v: ProjectorParams<f32>,
}

impl AdamState {
    pub fn new(params: &ProjectorParams<f32>) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// One Adam update with coupled L2 decay (`g + wd·w` feeds both moments)
/// and bias correction at step `t >= 1`.
pub fn adam_step(
    params: &mut ProjectorParams<f32>,
    grads: &ProjectorParams<f32>,
    state: &mut AdamState,
    config: &TrainConfig,
    t: u64,
) -> Result<()> {
    if t == 0 {
        return Err(Error::Config("adam step counter starts at 1".into()));
    }
    for g in grads.tensors() {
        if let Some(i) = g.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(format!("{} (element {i})", g.name)));
        }
    }
    let (b1, b2) = (config.adam_beta1, config.adam_beta2);
    let c1 = 1.0 - b1.powf(t as f64);
    let c2 = 1.0 - b2.powf(t as f64);
    let (lr, wd, eps) = (config.lr, config.weight_decay, config.adam_eps);
    let g_all = grads.tensors();
    for (((p, m), v), g) in params
        .tensors_mut()
        .into_iter()
        .zip(state.m.tensors_mut())
        .zip(state.v.tensors_mut())
        .zip(&g_all)
    {
        for i in 0..p.len() {
            let w = p[i] as f64;
            let grad = g.data[i] as f64 + wd * w;
            let mi = b1 * m[i] as f64 + (1.0 - b1) * grad;
            let vi = b2 * v[i] as f64 + (1.0 - b2) * grad * grad;
            m[i] = mi as f32;
            v[i] = vi as f32;
            let step = lr * (mi / c1) / ((vi / c2).sqrt() + eps);
            p[i] = (w - step) as f32;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub iterations: usize,
    /// Mean batch loss per iteration.
    pub losses: Vec<f64>,
    /// Number of synthesized images per batch.
    pub synth_counts: Vec<usize>,
    pub wall_time: Duration,
}

impl TrainLog {
    /// `iteration,loss,synth_flag_count` with a comment header recording the
    /// stopping rule. Wall time is left out so reruns are byte-identical.
    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "# iterations={} stopping=fixed-iteration-budget\niteration,loss,synth_flag_count\n",
            self.iterations
        );
        for (i, (l, c)) in self.losses.iter().zip(&self.synth_counts).enumerate() {
            s.push_str(&format!("{},{},{}\n", i + 1, l, c));
        }
        s
    }

    /// Mean loss over `range` of iterations (0-based, clamped).
    pub fn mean_loss(&self, range: std::ops::Range<usize>) -> f64 {
        let r = range.start.min(self.losses.len())..range.end.min(self.losses.len());
        let n = r.len().max(1) as f64;
        self.losses[r].iter().sum::<f64>() / n
    }
}

struct TrainImage {
    pixels: RgbImage,
    fg: ForegroundMask,
    reference: PatchGrid,
}

struct SampleResult {
    loss: f64,
    synthesized: bool,
    grads: ProjectorParams<f32>,
}

pub fn train(
    manifest: &FewShotManifest,
    index: &DatasetIndex,
    provider: &Provider,
    proj_config: &ProjectorConfig,
    train_config: &TrainConfig,
) -> Result<(ProjectorParams<f32>, TrainLog)> {
    train_with_progress(manifest, index, provider, proj_config, train_config, |_, _| {})
}

/// As [`train`], calling `progress(iteration, loss)` after every update.
pub fn train_with_progress(
    manifest: &FewShotManifest,
    index: &DatasetIndex,
    provider: &Provider,
    proj_config: &ProjectorConfig,
    train_config: &TrainConfig,
    progress: impl FnMut(usize, f64),
) -> Result<(ProjectorParams<f32>, TrainLog)> {
    train_config.validate()?;
    proj_config.validate()?;
    if !provider.can_encode_novel() {
        return Err(Error::NovelPixels);
    }
    let pool = manifest.pooled();
    if pool.is_empty() {
        return Err(Error::Config("manifest selects no training images".into()));
    }
    let images = pool
        .par_iter()
        .map(|&(_, id)| {
            let img = index.load_train(id, train_config.image_size)?;
            let reference = provider.encode(EncodeSource::Stored {
                id,
                image: Some(&img.pixels),
            })?;
            Ok(TrainImage {
                fg: binarize_foreground(&img.pixels),
                pixels: img.pixels,
                reference,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    train_on_images(images, provider, proj_config, train_config, progress)
}

/// Training on already-loaded normal images.
pub fn train_on(
    images: &[RgbImage],
    provider: &Provider,
    proj_config: &ProjectorConfig,
    train_config: &TrainConfig,
    progress: impl FnMut(usize, f64),
) -> Result<(ProjectorParams<f32>, TrainLog)> {
    train_config.validate()?;
    proj_config.validate()?;
    if !provider.can_encode_novel() {
        return Err(Error::NovelPixels);
    }
    let prepared = images
        .par_iter()
        .map(|img| {
            Ok(TrainImage {
                fg: binarize_foreground(img),
                reference: provider.encode(EncodeSource::Novel(img))?,
                pixels: img.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    train_on_images(prepared, provider, proj_config, train_config, progress)
}

const SAMPLE_STREAM_SALT: u64 = 0x5EED_0F5A_4D1E_0001;

fn train_on_images(
    images: Vec<TrainImage>,
    provider: &Provider,
    proj_config: &ProjectorConfig,
    cfg: &TrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<(ProjectorParams<f32>, TrainLog)> {
    if images.is_empty() {
        return Err(Error::Config("no training images".into()));
    }
    let first = &images[0].reference;
    if images.iter().any(|i| !i.reference.same_shape(first)) {
        return Err(Error::Shape("training images encode to different grid shapes".into()));
    }
    if first.dim != proj_config.dim {
        return Err(Error::Shape(format!(
            "provider dim {} but projector dim {}",
            first.dim, proj_config.dim
        )));
    }
    let mut params = init_projector(proj_config, first.len())?;
    let mut adam = AdamState::new(&params);
    let start = Instant::now();
    let mut log = TrainLog {
        iterations: cfg.iterations,
        losses: Vec::with_capacity(cfg.iterations),
        synth_counts: Vec::with_capacity(cfg.iterations),
        wall_time: Duration::ZERO,
    };
    let b = cfg.batch_size;
    let batch_scale = 1.0 / b as f64;
    for it in 1..=cfg.iterations {
        let mut pick_rng = SplitMix64::stream(cfg.data_seed, it as u64);
        let picks: Vec<usize> = (0..b).map(|_| pick_rng.below(images.len() as u64) as usize).collect();
        let results = picks
            .par_iter()
            .enumerate()
            .map(|(slot, &idx)| {
                let img = &images[idx];
                let mut rng = SplitMix64::stream(cfg.data_seed ^ SAMPLE_STREAM_SALT, (it * b + slot) as u64);
                let gated = gate_synthesis(&img.pixels, cfg.sigma, &cfg.synthesis, &img.fg, &mut rng)?;
                let synth_grid;
                let input = if gated.synthesized {
                    synth_grid = provider.encode(EncodeSource::Novel(&gated.image))?;
                    &synth_grid
                } else {
                    &img.reference
                };
                let (out, cache) = params.forward_tokens(&input.data)?;
                let denom = loss_denominator(input, cfg.loss);
                let mut sq = 0.0f64;
                let upstream: Vec<f32> = out
                    .iter()
                    .zip(&img.reference.data)
                    .map(|(&o, &r)| {
                        let d = o as f64 - r as f64;
                        sq += d * d;
                        (2.0 * d / denom * batch_scale) as f32
                    })
                    .collect();
                let mut grads = params.zeros_like();
                params.backward_tokens(&cache, &upstream, &mut grads)?;
                Ok(SampleResult {
                    loss: sq / denom,
                    synthesized: gated.synthesized,
                    grads,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let mut total = params.zeros_like();
        let mut loss = 0.0;
        let mut synth = 0;
        for r in &results {
            for (acc, g) in total.tensors_mut().into_iter().zip(r.grads.tensors()) {
                for (a, &v) in acc.iter_mut().zip(g.data) {
                    *a += v;
                }
            }
            loss += r.loss;
            synth += r.synthesized as usize;
        }
        adam_step(&mut params, &total, &mut adam, cfg, it as u64)?;
        let loss = loss * batch_scale;
        log.losses.push(loss);
        log.synth_counts.push(synth);
        progress(it, loss);
    }
    log.wall_time = start.elapsed();
    Ok((params, log))
}
