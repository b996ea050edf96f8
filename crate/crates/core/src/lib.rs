//! Few-shot visual anomaly detection by manifold projection.
//!
//! A frozen encoder turns images into patch-embedding grids. A small
//! residual-attention projector is trained to map grids of synthetically
//! corrupted images back onto the grids of their clean originals. At test
//! time the per-patch displacement between an embedding and its projection
//! is the anomaly score.
//!
//! The crate is organised by pipeline stage:
//!
//! * [`dataset`] indexes MVTec/VisA-style trees and draws seeded few-shot manifests.
//! * [`synthesis`] builds CutPaste-style structural anomalies inside the foreground.
//! * [`embedding`] provides patch grids from stored tensors or a deterministic toy encoder.
//! * [`projector`] is the residual attention network with hand-written backward pass.
//! * [`training`] runs the gated-synthesis Adam loop.
//! * [`inference`] turns displacements into patch, image and pixel scores.
//! * [`metrics`] computes AUROC, AUPR and capped PRO.
//! * [`analysis`] measures how embedding distance grows with defect area.

pub mod analysis;
pub mod dataset;
pub mod embedding;
pub mod error;
pub mod inference;
pub mod metrics;
pub mod procedural;
pub mod projector;
pub mod raster;
pub mod rng;
pub mod synthesis;
pub mod tensor;
pub mod training;

pub use embedding::{EncodeSource, PatchGrid, Provider, ProviderSpec};
pub use error::{Error, Result};
pub use projector::{ProjectorConfig, ProjectorParams};
pub use raster::{Mask, RgbImage};
pub use rng::SplitMix64;
