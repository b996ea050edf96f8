//! Patch-embedding grids from a frozen encoder.
//!
//! Real foundation-model features are produced out of process and stored as
//! FTNS files mirroring the image tree (`<category>/<split>/<stem>.ftns`).
//! For desk-scale work a deterministic random-projection encoder stands in.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::raster::RgbImage;
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

/// `gh × gw × dim` patch embeddings, row-major with channels fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub gh: usize,
    pub gw: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl PatchGrid {
    pub fn new(gh: usize, gw: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if gh == 0 || gw == 0 || dim == 0 {
            return Err(Error::Shape(format!("empty grid {gh}x{gw}x{dim}")));
        }
        if data.len() != gh * gw * dim {
            return Err(Error::Shape(format!(
                "grid {gh}x{gw}x{dim} needs {} values, got {}",
                gh * gw * dim,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Shape(format!("non-finite embedding value at flat index {i}")));
        }
        Ok(Self { gh, gw, dim, data })
    }

    pub fn zeros(gh: usize, gw: usize, dim: usize) -> Self {
        Self {
            gh,
            gw,
            dim,
            data: vec![0.0; gh * gw * dim],
        }
    }

    /// Number of patches.
    pub fn len(&self) -> usize {
        self.gh * self.gw
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn patch(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn same_shape(&self, other: &PatchGrid) -> bool {
        self.gh == other.gh && self.gw == other.gw && self.dim == other.dim
    }

    pub fn check_same_shape(&self, other: &PatchGrid) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "grids {}x{}x{} and {}x{}x{} differ",
                self.gh, self.gw, self.dim, other.gh, other.gw, other.dim
            )))
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            dims: vec![self.gh, self.gw, self.dim],
            data: self.data.clone(),
        }
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        match t.dims[..] {
            [gh, gw, dim] => PatchGrid::new(gh, gw, dim, t.data),
            _ => Err(Error::Shape(format!(
                "patch grid needs a rank-3 tensor, got dims {:?}",
                t.dims
            ))),
        }
    }
}

pub fn write_tensor(path: &Path, grid: &PatchGrid) -> Result<()> {
    if grid.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Shape("refusing to write non-finite grid".into()));
    }
    grid.to_tensor().write(path)
}

pub fn read_tensor(path: &Path) -> Result<PatchGrid> {
    PatchGrid::from_tensor(Tensor::read(path)?)
}

/// How patch embeddings are obtained.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderSpec {
    /// Precomputed FTNS files under `dir`, one per image id.
    File { dir: PathBuf, dim: Option<usize> },
    /// Random projection + tanh over non-overlapping patches.
    Toy {
        dim: usize,
        patch_size: usize,
        weight_seed: u64,
    },
}

impl FromStr for ProviderSpec {
    type Err = Error;

    /// Parses `toy:dim=64,patch=16,seed=7` or `file:dir=<path>[,dim=768]`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let mut kv = std::collections::BTreeMap::new();
        for part in rest.split(',').filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("provider option `{part}` is not key=value")))?;
            kv.insert(k.trim(), v.trim());
        }
        let num = |key: &str, default: Option<u64>| -> Result<u64> {
            match kv.get(key) {
                Some(v) => v
                    .parse()
                    .map_err(|_| Error::Config(format!("provider option {key}={v} is not an integer"))),
                None => default.ok_or_else(|| Error::Config(format!("provider option {key} is required"))),
            }
        };
        let spec = match kind {
            "toy" => {
                for k in kv.keys() {
                    if !["dim", "patch", "seed"].contains(k) {
                        return Err(Error::Config(format!("unknown toy provider option `{k}`")));
                    }
                }
                ProviderSpec::Toy {
                    dim: num("dim", Some(64))? as usize,
                    patch_size: num("patch", Some(16))? as usize,
                    weight_seed: num("seed", Some(7))?,
                }
            }
            "file" => {
                for k in kv.keys() {
                    if !["dir", "dim"].contains(k) {
                        return Err(Error::Config(format!("unknown file provider option `{k}`")));
                    }
                }
                let dir = kv
                    .get("dir")
                    .ok_or_else(|| Error::Config("file provider needs dir=<path>".into()))?;
                ProviderSpec::File {
                    dir: PathBuf::from(dir),
                    dim: kv.contains_key("dim").then(|| num("dim", None)).transpose()?.map(|d| d as usize),
                }
            }
            other => return Err(Error::Config(format!("unknown provider kind `{other}`"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for ProviderSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProviderSpec::File { dir, dim: None } => write!(f, "file:dir={}", dir.display()),
            ProviderSpec::File { dir, dim: Some(d) } => write!(f, "file:dir={},dim={d}", dir.display()),
            ProviderSpec::Toy {
                dim,
                patch_size,
                weight_seed,
            } => write!(f, "toy:dim={dim},patch={patch_size},seed={weight_seed}"),
        }
    }
}

impl ProviderSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            ProviderSpec::Toy { dim, patch_size, .. } => {
                if *dim == 0 || *patch_size == 0 {
                    return Err(Error::Config("toy provider needs dim >= 1 and patch >= 1".into()));
                }
            }
            ProviderSpec::File { dim: Some(0), .. } => {
                return Err(Error::Config("file provider dim must be positive".into()))
            }
            ProviderSpec::File { .. } => {}
        }
        Ok(())
    }
}

/// What is being encoded.
#[derive(Debug, Clone, Copy)]
pub enum EncodeSource<'a> {
    /// A dataset image with its id (relative path); file providers look the id up.
    Stored { id: &'a str, image: Option<&'a RgbImage> },
    /// Pixels with no stored embedding, e.g. a freshly synthesized image.
    Novel(&'a RgbImage),
}

/// A ready-to-use encoder. Read-only after construction.
#[derive(Debug, Clone)]
pub struct Provider {
    spec: ProviderSpec,
    toy_weights: Option<Vec<f32>>,
}

impl Provider {
    pub fn new(spec: ProviderSpec) -> Result<Self> {
        spec.validate()?;
        let toy_weights = match &spec {
            ProviderSpec::Toy {
                dim,
                patch_size,
                weight_seed,
            } => Some(toy_weights(*dim, 3 * patch_size * patch_size, *weight_seed)),
            ProviderSpec::File { .. } => None,
        };
        Ok(Self { spec, toy_weights })
    }

    pub fn spec(&self) -> &ProviderSpec {
        &self.spec
    }

    /// Output channel count, when known without reading a file.
    pub fn dim(&self) -> Option<usize> {
        match &self.spec {
            ProviderSpec::Toy { dim, .. } => Some(*dim),
            ProviderSpec::File { dim, .. } => *dim,
        }
    }

    pub fn can_encode_novel(&self) -> bool {
        matches!(self.spec, ProviderSpec::Toy { .. })
    }

    /// Path a file provider reads for `id`: the id with its extension replaced by `.ftns`.
    pub fn embedding_path(dir: &Path, id: &str) -> PathBuf {
        dir.join(id).with_extension("ftns")
    }

    pub fn encode(&self, source: EncodeSource<'_>) -> Result<PatchGrid> {
        match (&self.spec, source) {
            (ProviderSpec::File { .. }, EncodeSource::Novel(_)) => Err(Error::NovelPixels),
            (ProviderSpec::File { dir, dim }, EncodeSource::Stored { id, .. }) => {
                let path = Self::embedding_path(dir, id);
                if !path.is_file() {
                    return Err(Error::MissingEmbedding(path));
                }
                let grid = read_tensor(&path)?;
                if let Some(d) = dim {
                    if grid.dim != *d {
                        return Err(Error::Shape(format!(
                            "{}: embedding dim {} but provider declares {d}",
                            path.display(),
                            grid.dim
                        )));
                    }
                }
                Ok(grid)
            }
            (ProviderSpec::Toy { dim, patch_size, .. }, src) => {
                let image = match src {
                    EncodeSource::Novel(img) => img,
                    EncodeSource::Stored { image: Some(img), .. } => img,
                    EncodeSource::Stored { id, image: None } => {
                        return Err(Error::Config(format!(
                            "toy provider needs pixels for {id}, none supplied"
                        )))
                    }
                };
                let weights = self.toy_weights.as_deref().expect("toy weights built in new()");
                project_patches(image, *dim, *patch_size, weights)
            }
        }
    }
}

/// Toy-encoder weight matrix, `dim × fan_in` row-major. Entries are
/// `a * (2u - 1)` with `u = SplitMix64(seed).next_f64()` drawn in row-major
/// order and `a = fan_in^(-1/2)`.
pub fn toy_weights(dim: usize, fan_in: usize, seed: u64) -> Vec<f32> {
    let a = (fan_in as f64).powf(-0.5);
    let mut rng = SplitMix64::new(seed);
    (0..dim * fan_in)
        .map(|_| (a * (2.0 * rng.next_f64() - 1.0)) as f32)
        .collect()
}

/// Deterministic stand-in for a frozen patch encoder: each non-overlapping
/// `patch_size²` patch is flattened in (row, column, channel) order and
/// mapped through `tanh(W v)` with no bias.
pub fn toy_encode(image: &RgbImage, dim: usize, patch_size: usize, weight_seed: u64) -> Result<PatchGrid> {
    if dim == 0 || patch_size == 0 {
        return Err(Error::Config("toy encoder needs dim >= 1 and patch >= 1".into()));
    }
    let w = toy_weights(dim, 3 * patch_size * patch_size, weight_seed);
    project_patches(image, dim, patch_size, &w)
}

fn project_patches(image: &RgbImage, dim: usize, patch_size: usize, weights: &[f32]) -> Result<PatchGrid> {
    if !image.width.is_multiple_of(patch_size) || !image.height.is_multiple_of(patch_size) {
        return Err(Error::Shape(format!(
            "image {}x{} is not divisible by patch size {patch_size}",
            image.width, image.height
        )));
    }
    let (gh, gw) = (image.height / patch_size, image.width / patch_size);
    let fan_in = 3 * patch_size * patch_size;
    let row_len = patch_size * 3;
    let mut v = vec![0.0f32; fan_in];
    let mut data = Vec::with_capacity(gh * gw * dim);
    for py in 0..gh {
        for px in 0..gw {
            for r in 0..patch_size {
                let y = py * patch_size + r;
                let start = (y * image.width + px * patch_size) * 3;
                v[r * row_len..(r + 1) * row_len].copy_from_slice(&image.data[start..start + row_len]);
            }
            for wrow in weights.chunks_exact(fan_in) {
                let acc: f32 = wrow.iter().zip(&v).map(|(a, b)| a * b).sum();
                data.push(acc.tanh());
            }
        }
    }
    Ok(PatchGrid { gh, gw, dim, data })
}
