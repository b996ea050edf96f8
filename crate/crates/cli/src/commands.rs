use std::collections::BTreeSet;
use std::path::Path;

use anyhow::{Context, Result};
use foundad_core::analysis::{distance_vs_area, spearman};
use foundad_core::dataset::{sample_few_shot, scan_dataset, FewShotManifest, TestItem};
use foundad_core::inference::{score_image, Heatmap, ScoreOptions};
use foundad_core::metrics::{evaluate, EvalItem};
use foundad_core::procedural::{write_toy_dataset, ToyDatasetSpec};
use foundad_core::projector::{inspect_header, load_params, save_params};
use foundad_core::synthesis::{binarize_foreground, synthesize_anomaly, SynthesisParams};
use foundad_core::tensor::Tensor;
use foundad_core::training::{train_with_progress, LossReduction, TrainConfig};
use foundad_core::{EncodeSource, Mask, ProjectorConfig, Provider, RgbImage, SplitMix64};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::args::*;
use crate::plot::scatter_png;
use crate::UsageError;

fn require_dir(path: &Path, what: &str) -> Result<()> {
    if !path.is_dir() {
        return Err(UsageError(format!("{what} {} is not a directory", path.display())).into());
    }
    Ok(())
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(UsageError(format!("{what} {} does not exist", path.display())).into());
    }
    Ok(())
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))?;
    }
    Ok(())
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    create_parent(path)?;
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn sample(a: SampleArgs) -> Result<()> {
    require_dir(&a.dataset.root, "dataset root")?;
    if a.k == 0 {
        return Err(UsageError("--k must be at least 1".into()).into());
    }
    let index = scan_dataset(&a.dataset.root, a.dataset.layout)?;
    eprint!("{}", index.summary());
    let manifest = sample_few_shot(&index, a.k, a.seed)?;
    write_file(&a.out, manifest.to_json())
}

pub fn train(a: TrainArgs) -> Result<()> {
    require_dir(&a.dataset.root, "dataset root")?;
    require_file(&a.manifest, "manifest")?;
    let provider = Provider::new(a.provider)?;
    if !provider.can_encode_novel() {
        return Err(UsageError("training synthesizes new images, which a file provider cannot encode".into()).into());
    }
    let dim = match provider.dim() {
        Some(d) => d,
        None => return Err(UsageError("training needs a provider with a known dim".into()).into()),
    };
    let proj = ProjectorConfig {
        depth: a.depth,
        dim,
        heads: a.heads.unwrap_or_else(|| ProjectorConfig::default_heads(dim)),
        mlp_ratio: a.mlp_ratio,
        use_pos_embed: !a.no_pos_embed,
        init_seed: a.init_seed,
    };
    let cfg = TrainConfig {
        lr: a.lr,
        weight_decay: a.wd,
        batch_size: a.batch,
        iterations: a.iters,
        sigma: a.sigma,
        data_seed: a.data_seed,
        image_size: a.image_size,
        loss: match a.loss {
            LossArg::ElementMean => LossReduction::ElementMean,
            LossArg::PatchSum => LossReduction::PatchSum,
        },
        synthesis: SynthesisParams {
            rotate: a.rotate,
            ..SynthesisParams::default()
        },
        ..TrainConfig::default()
    };
    proj.validate()?;
    cfg.validate()?;
    let manifest = FewShotManifest::read(&a.manifest)?;
    let index = scan_dataset(&a.dataset.root, a.dataset.layout)?;
    let every = (a.iters / 10).max(1);
    let (params, log) = train_with_progress(&manifest, &index, &provider, &proj, &cfg, |it, loss| {
        if it % every == 0 {
            eprintln!("iteration {it}/{}: loss {loss:.6e}", a.iters);
        }
    })?;
    save_params(&a.out, &params)?;
    let log_path = a.log.unwrap_or_else(|| a.out.with_extension("log.csv"));
    write_file(&log_path, log.to_csv())?;
    eprintln!("wrote {} and {} in {:.1?}", a.out.display(), log_path.display(), log.wall_time);
    Ok(())
}

/// One row of `scores.csv`.
#[derive(Debug, Serialize, Deserialize)]
pub struct ScoreRow {
    pub category: String,
    pub image: String,
    pub label: String,
    pub mask: String,
    pub score: f64,
}

fn selected_items<'a>(items: Vec<TestItem<'a>>, list: Option<&Path>) -> Result<Vec<TestItem<'a>>> {
    let Some(path) = list else { return Ok(items) };
    require_file(path, "image list")?;
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let wanted: BTreeSet<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let known: BTreeSet<&str> = items.iter().map(|i| i.image).collect();
    if let Some(missing) = wanted.iter().find(|w| !known.contains(**w)) {
        return Err(UsageError(format!("{missing} is not a test image of the dataset")).into());
    }
    Ok(items.into_iter().filter(|i| wanted.contains(i.image)).collect())
}

pub fn score(a: ScoreArgs) -> Result<()> {
    require_dir(&a.dataset.root, "dataset root")?;
    require_file(&a.ckpt, "checkpoint")?;
    let top_k = a.topk.unwrap_or_else(|| a.dataset.layout.default_top_k());
    if top_k == 0 {
        return Err(UsageError("--topk must be at least 1".into()).into());
    }
    let params = load_params(&a.ckpt)?;
    let provider = Provider::new(a.provider)?;
    let index = scan_dataset(&a.dataset.root, a.dataset.layout)?;
    let items = selected_items(index.test_items(), a.images.as_deref())?;
    let options = ScoreOptions {
        top_k,
        smooth: a.smooth,
    };
    let heat_dir = a.out.join("heatmaps");
    let size = a.image_size;
    let rows = items
        .par_iter()
        .map(|item| -> Result<ScoreRow> {
            let img = item.load(&a.dataset.root, size)?;
            let scored = score_image(
                &params,
                &provider,
                EncodeSource::Stored {
                    id: item.image,
                    image: Some(&img.pixels),
                },
                size,
                size,
                &options,
            )?;
            let path = Provider::embedding_path(&heat_dir, item.image);
            scored.heatmap.to_tensor().write(&path)?;
            if a.png {
                scored.heatmap.save_png16(&path.with_extension("png"))?;
            }
            Ok(ScoreRow {
                category: item.category.to_string(),
                image: item.image.to_string(),
                label: if item.mask.is_some() { "anomalous" } else { "normal" }.into(),
                mask: item.mask.unwrap_or("").to_string(),
                score: scored.score.value,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let path = a.out.join("scores.csv");
    create_parent(&path)?;
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    eprintln!("scored {} images (top-k {top_k}) into {}", rows.len(), a.out.display());
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    require_file(&a.scores, "scores file")?;
    require_dir(&a.heatmaps, "heatmap directory")?;
    require_dir(&a.gt, "ground-truth root")?;
    if !(a.fpr_cap > 0.0 && a.fpr_cap <= 1.0) {
        return Err(UsageError(format!("--fpr-cap {} outside (0, 1]", a.fpr_cap)).into());
    }
    let mut reader = csv::Reader::from_path(&a.scores).with_context(|| format!("reading {}", a.scores.display()))?;
    let rows = reader.deserialize::<ScoreRow>().collect::<Result<Vec<_>, _>>()?;
    let items = rows
        .par_iter()
        .map(|r| -> Result<EvalItem> {
            let heat = Heatmap::from_tensor(Tensor::read(&Provider::embedding_path(&a.heatmaps, &r.image))?)?;
            let mask = if r.mask.is_empty() {
                None
            } else {
                Some(Mask::load(&a.gt.join(&r.mask))?.resize_nearest(heat.width, heat.height))
            };
            Ok(EvalItem {
                category: r.category.clone(),
                anomalous: r.label == "anomalous",
                score: r.score,
                width: heat.width,
                height: heat.height,
                heatmap: heat.data,
                mask,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = evaluate(&items, a.fpr_cap, a.pro_thresholds)?;
    write_file(&a.out.join("metrics.csv"), report.to_csv())?;
    write_file(&a.out.join("summary.json"), report.to_json())?;
    print!("{}", report.to_csv());
    Ok(())
}

pub fn default_ratios() -> Vec<f64> {
    let (lo, hi, n) = (0.005, 0.15, 20);
    std::iter::once(0.0)
        .chain((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64))
        .collect()
}

pub fn analyze(a: AnalyzeArgs) -> Result<()> {
    require_file(&a.image, "image")?;
    let image = RgbImage::load(&a.image)?.resize_bilinear(a.image_size, a.image_size);
    let provider = Provider::new(a.provider)?;
    if !provider.can_encode_novel() {
        return Err(UsageError("analysis needs a provider that can encode new pixels".into()).into());
    }
    let ratios = a.ratios.unwrap_or_else(default_ratios);
    let series = distance_vs_area(&image, &provider, &ratios, a.seed)?;
    write_file(&a.out, series.to_csv())?;
    let rho = spearman(&series)?;
    println!("spearman rho = {rho:.4} over {} points", series.points.len());
    if let Some(plot) = a.plot {
        let pts: Vec<(f64, f64)> = series.points.iter().map(|p| (p.anomaly_pixels as f64, p.distance)).collect();
        create_parent(&plot)?;
        scatter_png(&plot, &pts)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SynthReport<'a> {
    seed: u64,
    foreground_fallback: bool,
    geometry: &'a foundad_core::synthesis::Geometry,
}

pub fn synth(a: SynthArgs) -> Result<()> {
    require_file(&a.image, "image")?;
    let mut image = RgbImage::load(&a.image)?;
    if let Some(s) = a.image_size {
        image = image.resize_bilinear(s, s);
    }
    let params = SynthesisParams {
        area_ratio: (a.area_min, a.area_max),
        rotate: a.rotate,
        ..SynthesisParams::default()
    };
    if let Err(e) = params.validate() {
        return Err(UsageError(e.to_string()).into());
    }
    let fg = binarize_foreground(&image);
    let result = synthesize_anomaly(&image, &fg, &params, &mut SplitMix64::new(a.seed))?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    result.image.save_png(&a.out.join("synth.png"))?;
    result.anomaly_mask.save_png(&a.out.join("mask.png"))?;
    let report = SynthReport {
        seed: a.seed,
        foreground_fallback: fg.fallback,
        geometry: &result.geometry,
    };
    write_file(&a.out.join("geometry.json"), serde_json::to_string_pretty(&report)? + "\n")
}

pub fn inspect(a: InspectArgs) -> Result<()> {
    require_file(&a.ckpt, "checkpoint")?;
    let h = inspect_header(&a.ckpt)?;
    let c = &h.config;
    println!("depth: {}", c.depth);
    println!("dim: {}", c.dim);
    println!("heads: {}", c.heads);
    println!("mlp_ratio: {}", c.mlp_ratio);
    println!("pos_embed: {}", c.use_pos_embed);
    println!("init_seed: {}", c.init_seed);
    println!("tokens: {}", h.n_tokens);
    let count: usize = h.tensors.iter().map(|t| t.dims.iter().product::<usize>()).sum();
    println!("tensors: {} ({count} parameters)", h.tensors.len());
    Ok(())
}

pub fn toy_data(a: ToyDataArgs) -> Result<()> {
    let spec = ToyDatasetSpec {
        categories: a.categories,
        train_per_category: a.train,
        test_good_per_category: a.good,
        test_bad_per_category: a.bad,
        size: a.size,
        noise: a.noise,
        seed: a.seed,
    };
    if spec.categories == 0 || spec.train_per_category == 0 || spec.size < 16 {
        return Err(UsageError("need at least one category, one training image and size >= 16".into()).into());
    }
    write_toy_dataset(&a.out, &spec)?;
    eprintln!("wrote {} categories to {}", spec.categories, a.out.display());
    Ok(())
}

