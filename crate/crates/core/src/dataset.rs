//! Dataset indexing, seeded few-shot sampling and image loading.
//!
//! Two directory layouts are understood. Both keep normal training images in
//! `<cat>/train/good` and test images in `<cat>/test/<defect>` (with `good`
//! holding normal test images). They differ in ground-truth naming:
//!
//! * `mvtec`: `<cat>/ground_truth/<defect>/<stem>_mask.png`
//! * `visa` (MVTec-style reorganisation of VisA): `<cat>/ground_truth/<defect>/<stem>.png`

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Mask, RgbImage};
use crate::rng::{fnv1a64, SplitMix64};

pub const MANIFEST_SCHEMA: &str = "foundad-manifest/1";

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp", "tif", "tiff"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Layout {
    Mvtec,
    Visa,
}

impl Layout {
    /// Number of top patch scores averaged into the image score.
    pub fn default_top_k(self) -> usize {
        match self {
            Layout::Mvtec => 10,
            Layout::Visa => 6,
        }
    }

    fn mask_name(self, stem: &str) -> String {
        match self {
            Layout::Mvtec => format!("{stem}_mask.png"),
            Layout::Visa => format!("{stem}.png"),
        }
    }
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mvtec" | "mvtec-ad" => Ok(Layout::Mvtec),
            "visa" => Ok(Layout::Visa),
            other => Err(Error::Config(format!("unknown layout `{other}` (expected mvtec or visa)"))),
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layout::Mvtec => "mvtec",
            Layout::Visa => "visa",
        })
    }
}

/// Test image id paired with its mask id. Ids are `/`-separated paths relative to the root.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct AnomalousEntry {
    pub image: String,
    pub mask: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryEntry {
    pub name: String,
    pub train_normal: Vec<String>,
    pub test_normal: Vec<String>,
    pub test_anomalous: Vec<AnomalousEntry>,
}

impl CategoryEntry {
    pub fn counts(&self) -> (usize, usize, usize) {
        (self.train_normal.len(), self.test_normal.len(), self.test_anomalous.len())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub layout: Layout,
    pub categories: Vec<CategoryEntry>,
}

impl DatasetIndex {
    pub fn category(&self, name: &str) -> Option<&CategoryEntry> {
        self.categories.iter().find(|c| c.name == name)
    }

    /// One line per category: `name train=.. test_good=.. test_bad=..`.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for c in &self.categories {
            let (a, b, d) = c.counts();
            s.push_str(&format!("{} train={a} test_good={b} test_bad={d}\n", c.name));
        }
        s
    }

    pub fn path_of(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    pub fn load_train(&self, id: &str, target_size: usize) -> Result<LabeledImage> {
        load_image(&self.root, id, None, target_size)
    }

    /// Every test image of every category, normal ones first within a category.
    pub fn test_items(&self) -> Vec<TestItem<'_>> {
        let mut out = Vec::new();
        for c in &self.categories {
            for id in &c.test_normal {
                out.push(TestItem {
                    category: &c.name,
                    image: id,
                    mask: None,
                });
            }
            for a in &c.test_anomalous {
                out.push(TestItem {
                    category: &c.name,
                    image: &a.image,
                    mask: Some(&a.mask),
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TestItem<'a> {
    pub category: &'a str,
    pub image: &'a str,
    pub mask: Option<&'a str>,
}

impl TestItem<'_> {
    pub fn load(&self, root: &Path, target_size: usize) -> Result<LabeledImage> {
        load_image(root, self.image, self.mask, target_size)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Anomalous,
}

#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub id: String,
    pub pixels: RgbImage,
    pub anomaly_mask: Option<Mask>,
    pub label: Label,
}

fn rel_id(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn sorted_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        if name.to_string_lossy().starts_with('.') {
            continue;
        }
        out.push(entry.path());
    }
    out.sort();
    Ok(out)
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let files = sorted_dir(dir)?
        .into_iter()
        .filter(|p| p.is_file() && is_image(p))
        .collect::<Vec<_>>();
    for f in &files {
        image::image_dimensions(f).map_err(|e| Error::Decode {
            path: f.clone(),
            message: e.to_string(),
        })?;
    }
    Ok(files)
}

/// Index a dataset tree. Every list in the result is sorted by id.
pub fn scan_dataset(root: &Path, layout: Layout) -> Result<DatasetIndex> {
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset root is not a directory"),
        ));
    }
    let mut categories = Vec::new();
    for cat_dir in sorted_dir(root)?.into_iter().filter(|p| p.is_dir()) {
        let name = rel_id(root, &cat_dir);
        let train_normal: Vec<String> = image_files(&cat_dir.join("train").join("good"))?
            .iter()
            .map(|p| rel_id(root, p))
            .collect();
        if train_normal.is_empty() {
            return Err(Error::EmptyCategory { category: name });
        }
        let mut test_normal = Vec::new();
        let mut test_anomalous = Vec::new();
        let test_dir = cat_dir.join("test");
        if test_dir.is_dir() {
            for defect_dir in sorted_dir(&test_dir)?.into_iter().filter(|p| p.is_dir()) {
                let defect = defect_dir.file_name().unwrap().to_string_lossy().into_owned();
                for img in image_files(&defect_dir)? {
                    if defect == "good" {
                        test_normal.push(rel_id(root, &img));
                        continue;
                    }
                    let stem = img.file_stem().unwrap().to_string_lossy();
                    let mask = cat_dir
                        .join("ground_truth")
                        .join(&defect)
                        .join(layout.mask_name(&stem));
                    if !mask.is_file() {
                        return Err(Error::MissingMask { image: img, expected: mask });
                    }
                    test_anomalous.push(AnomalousEntry {
                        image: rel_id(root, &img),
                        mask: rel_id(root, &mask),
                    });
                }
            }
        }
        test_normal.sort();
        test_anomalous.sort();
        categories.push(CategoryEntry {
            name,
            train_normal,
            test_normal,
            test_anomalous,
        });
    }
    if categories.is_empty() {
        return Err(Error::NoCategories(root.to_path_buf()));
    }
    Ok(DatasetIndex {
        root: root.to_path_buf(),
        layout,
        categories,
    })
}

/// Seeded k-shot selection per category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotManifest {
    pub schema: String,
    pub seed: u64,
    pub k: usize,
    pub selections: BTreeMap<String, Vec<String>>,
}

impl FewShotManifest {
    /// Canonical JSON encoding (pretty, trailing newline).
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: FewShotManifest = serde_json::from_str(s)?;
        if m.schema != MANIFEST_SCHEMA {
            return Err(Error::Config(format!(
                "manifest schema `{}` (expected {MANIFEST_SCHEMA})",
                m.schema
            )));
        }
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// All selected ids across categories, categories in name order.
    pub fn pooled(&self) -> Vec<(&str, &str)> {
        self.selections
            .iter()
            .flat_map(|(c, ids)| ids.iter().map(move |id| (c.as_str(), id.as_str())))
            .collect()
    }
}

/// Draw `min(k, n)` training images per category.
///
/// The sorted `train_normal` list is partially Fisher-Yates shuffled with a
/// SplitMix64 stream seeded by `seed ^ fnv1a64(category)`: for
/// `i in 0..min(k, n)`, swap `i` with `i + below(n - i)`. The prefix is then
/// sorted again. Because only the prefix length depends on `k`, the
/// selection for `k` is contained in the selection for `k + 1`.
pub fn sample_few_shot(index: &DatasetIndex, k: usize, seed: u64) -> Result<FewShotManifest> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let mut selections = BTreeMap::new();
    for cat in &index.categories {
        let mut pool = cat.train_normal.clone();
        pool.sort();
        let n = pool.len();
        let take = k.min(n);
        let mut rng = SplitMix64::new(seed ^ fnv1a64(&cat.name));
        for i in 0..take {
            let j = i + rng.below((n - i) as u64) as usize;
            pool.swap(i, j);
        }
        pool.truncate(take);
        pool.sort();
        selections.insert(cat.name.clone(), pool);
    }
    Ok(FewShotManifest {
        schema: MANIFEST_SCHEMA.into(),
        seed,
        k,
        selections,
    })
}

/// Load and resize one image (bilinear) and its optional mask (nearest).
pub fn load_image(root: &Path, id: &str, mask_id: Option<&str>, target_size: usize) -> Result<LabeledImage> {
    if target_size == 0 {
        return Err(Error::Config("target size must be positive".into()));
    }
    let pixels = RgbImage::load(&root.join(id))?.resize_bilinear(target_size, target_size);
    let anomaly_mask = match mask_id {
        Some(m) => Some(Mask::load(&root.join(m))?.resize_nearest(target_size, target_size)),
        None => None,
    };
    let label = if anomaly_mask.is_some() {
        Label::Anomalous
    } else {
        Label::Normal
    };
    Ok(LabeledImage {
        id: id.to_string(),
        pixels,
        anomaly_mask,
        label,
    })
}
