//! The manifold projector: a stack of pre-norm residual transformer blocks
//! over the patch tokens of one grid.
//!
//! Each block computes `x += Attn(LN(x))` followed, when `mlp_ratio > 0`, by
//! `x += MLP(LN(x))` with a GELU hidden layer. A learned positional table is
//! added to the input tokens when enabled. Everything is generic over the
//! float type so gradients can be checked in f64 while training runs in f32.

mod checkpoint;
mod model;
mod ops;

use std::fmt::Debug;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

pub use checkpoint::{inspect_header, load_params, save_params, CheckpointHeader, TensorEntry, FADP_MAGIC, FADP_VERSION};
pub use model::{backward, forward, ForwardCache};

/// Scale applied to the attention output projection and the second MLP
/// weight at initialization, so the untrained network is close to identity.
pub const RESIDUAL_INIT_SCALE: f64 = 1e-3;
pub const LAYER_NORM_EPS: f64 = 1e-6;

pub trait Real: num_traits::Float + std::iter::Sum + Default + Debug + Send + Sync + 'static {}
impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectorConfig {
    pub depth: usize,
    pub dim: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    pub use_pos_embed: bool,
    pub init_seed: u64,
}

impl ProjectorConfig {
    /// Depth 6, MLP ratio 4, positional table on, `dim / 64` heads (at least 1).
    pub fn new(dim: usize) -> Self {
        Self {
            depth: 6,
            dim,
            heads: Self::default_heads(dim),
            mlp_ratio: 4.0,
            use_pos_embed: true,
            init_seed: 0,
        }
    }

    pub fn default_heads(dim: usize) -> usize {
        (dim / 64).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::Config("projector depth must be at least 1".into()));
        }
        if self.dim == 0 || self.heads == 0 {
            return Err(Error::Config("projector dim and heads must be positive".into()));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "dim {} is not divisible by heads {}",
                self.dim, self.heads
            )));
        }
        if !(self.mlp_ratio.is_finite() && self.mlp_ratio >= 0.0) {
            return Err(Error::Config(format!("mlp_ratio {} must be >= 0", self.mlp_ratio)));
        }
        Ok(())
    }

    pub fn mlp_hidden(&self) -> usize {
        (self.mlp_ratio * self.dim as f64).round() as usize
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

/// Weights of one block. Linear weights are stored `[in, out]` row-major
/// (`y = x W + b`). The MLP tensors and the second norm are empty when the
/// block is attention-only.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<T> {
    pub ln1_scale: Vec<T>,
    pub ln1_shift: Vec<T>,
    pub q_w: Vec<T>,
    pub q_b: Vec<T>,
    pub k_w: Vec<T>,
    pub k_b: Vec<T>,
    pub v_w: Vec<T>,
    pub v_b: Vec<T>,
    pub o_w: Vec<T>,
    pub o_b: Vec<T>,
    pub ln2_scale: Vec<T>,
    pub ln2_shift: Vec<T>,
    pub fc1_w: Vec<T>,
    pub fc1_b: Vec<T>,
    pub fc2_w: Vec<T>,
    pub fc2_b: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Scale,
    Shift,
    Weight { fan_in: usize, residual_out: bool },
    Bias,
}

impl<T: Real> BlockParams<T> {
    /// `(suffix, dims, kind, tensor)` in checkpoint order.
    fn layout(&self, d: usize, hidden: usize) -> Vec<(&'static str, Vec<usize>, Kind, &Vec<T>)> {
        let w = |fan_in, residual_out| Kind::Weight { fan_in, residual_out };
        let mut v = vec![
            ("ln1.scale", vec![d], Kind::Scale, &self.ln1_scale),
            ("ln1.shift", vec![d], Kind::Shift, &self.ln1_shift),
            ("attn.q.weight", vec![d, d], w(d, false), &self.q_w),
            ("attn.q.bias", vec![d], Kind::Bias, &self.q_b),
            ("attn.k.weight", vec![d, d], w(d, false), &self.k_w),
            ("attn.k.bias", vec![d], Kind::Bias, &self.k_b),
            ("attn.v.weight", vec![d, d], w(d, false), &self.v_w),
            ("attn.v.bias", vec![d], Kind::Bias, &self.v_b),
            ("attn.o.weight", vec![d, d], w(d, true), &self.o_w),
            ("attn.o.bias", vec![d], Kind::Bias, &self.o_b),
        ];
        if hidden > 0 {
            v.extend([
                ("ln2.scale", vec![d], Kind::Scale, &self.ln2_scale),
                ("ln2.shift", vec![d], Kind::Shift, &self.ln2_shift),
                ("mlp.fc1.weight", vec![d, hidden], w(d, false), &self.fc1_w),
                ("mlp.fc1.bias", vec![hidden], Kind::Bias, &self.fc1_b),
                ("mlp.fc2.weight", vec![hidden, d], w(hidden, true), &self.fc2_w),
                ("mlp.fc2.bias", vec![d], Kind::Bias, &self.fc2_b),
            ]);
        }
        v
    }

    fn tensors_mut(&mut self, hidden: usize) -> Vec<&mut Vec<T>> {
        let mut v = vec![
            &mut self.ln1_scale,
            &mut self.ln1_shift,
            &mut self.q_w,
            &mut self.q_b,
            &mut self.k_w,
            &mut self.k_b,
            &mut self.v_w,
            &mut self.v_b,
            &mut self.o_w,
            &mut self.o_b,
        ];
        if hidden > 0 {
            v.extend([
                &mut self.ln2_scale,
                &mut self.ln2_shift,
                &mut self.fc1_w,
                &mut self.fc1_b,
                &mut self.fc2_w,
                &mut self.fc2_b,
            ]);
        }
        v
    }

    fn zeros(d: usize, hidden: usize) -> Self {
        let z = |n: usize| vec![T::zero(); n];
        let m = |n: usize| if hidden > 0 { z(n) } else { Vec::new() };
        Self {
            ln1_scale: z(d),
            ln1_shift: z(d),
            q_w: z(d * d),
            q_b: z(d),
            k_w: z(d * d),
            k_b: z(d),
            v_w: z(d * d),
            v_b: z(d),
            o_w: z(d * d),
            o_b: z(d),
            ln2_scale: m(d),
            ln2_shift: m(d),
            fc1_w: m(d * hidden),
            fc1_b: m(hidden),
            fc2_w: m(hidden * d),
            fc2_b: m(d),
        }
    }
}

/// Named view of one parameter tensor.
#[derive(Debug)]
pub struct NamedTensor<'a, T> {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: &'a [T],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorParams<T = f32> {
    pub config: ProjectorConfig,
    /// Token count the positional table was built for.
    pub n_tokens: usize,
    /// `n_tokens × dim`, present iff `config.use_pos_embed`.
    pub pos: Option<Vec<T>>,
    pub blocks: Vec<BlockParams<T>>,
}

impl<T: Real> ProjectorParams<T> {
    /// Same shapes as `config`/`n_tokens`, every entry zero.
    pub fn zeros(config: &ProjectorConfig, n_tokens: usize) -> Result<Self> {
        config.validate()?;
        if n_tokens == 0 {
            return Err(Error::Config("projector needs at least one token".into()));
        }
        let (d, hidden) = (config.dim, config.mlp_hidden());
        Ok(Self {
            config: config.clone(),
            n_tokens,
            pos: config.use_pos_embed.then(|| vec![T::zero(); n_tokens * d]),
            blocks: (0..config.depth).map(|_| BlockParams::zeros(d, hidden)).collect(),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config, self.n_tokens).expect("shapes already validated")
    }

    /// Every tensor with its name and dims, in checkpoint order.
    pub fn tensors(&self) -> Vec<NamedTensor<'_, T>> {
        self.layout()
            .into_iter()
            .map(|(name, dims, _, data)| NamedTensor {
                name,
                dims,
                data: data.as_slice(),
            })
            .collect()
    }

    fn layout(&self) -> Vec<(String, Vec<usize>, Kind, &Vec<T>)> {
        let (d, hidden) = (self.config.dim, self.config.mlp_hidden());
        let mut out = Vec::new();
        if let Some(pos) = &self.pos {
            out.push(("pos_embed".to_string(), vec![self.n_tokens, d], Kind::Shift, pos));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            for (suffix, dims, kind, t) in b.layout(d, hidden) {
                out.push((format!("blocks.{i}.{suffix}"), dims, kind, t));
            }
        }
        out
    }

    /// Mutable tensors in the same order as [`Self::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        let hidden = self.config.mlp_hidden();
        let mut out = Vec::new();
        if let Some(pos) = &mut self.pos {
            out.push(pos);
        }
        for b in &mut self.blocks {
            out.extend(b.tensors_mut(hidden));
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> ProjectorParams<U> {
        let mut out = ProjectorParams::<U>::zeros(&self.config, self.n_tokens).expect("validated");
        for (dst, src) in out.tensors_mut().into_iter().zip(self.tensors()) {
            for (d, s) in dst.iter_mut().zip(src.data) {
                *d = U::from(*s).expect("finite cast");
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

/// Near-identity initialization.
///
/// Weights are uniform in `±fan_in^(-1/2)`, drawn from
/// `SplitMix64(init_seed)` tensor by tensor in checkpoint order, row-major.
/// The attention output and second MLP weights are then scaled by
/// [`RESIDUAL_INIT_SCALE`]. Biases, shifts and the positional table are
/// zero, norm scales one; none of them consume random draws.
pub fn init_projector(config: &ProjectorConfig, n_tokens: usize) -> Result<ProjectorParams<f32>> {
    let mut params = ProjectorParams::<f32>::zeros(config, n_tokens)?;
    let kinds: Vec<Kind> = params.layout().into_iter().map(|(_, _, k, _)| k).collect();
    let mut rng = SplitMix64::new(config.init_seed);
    for (t, kind) in params.tensors_mut().into_iter().zip(kinds) {
        match kind {
            Kind::Scale => t.iter_mut().for_each(|v| *v = 1.0),
            Kind::Shift | Kind::Bias => {}
            Kind::Weight { fan_in, residual_out } => {
                let a = (fan_in as f64).powf(-0.5);
                let s = if residual_out { RESIDUAL_INIT_SCALE } else { 1.0 };
                for v in t.iter_mut() {
                    *v = (s * a * (2.0 * rng.next_f64() - 1.0)) as f32;
                }
            }
        }
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ProjectorConfig {
        ProjectorConfig {
            depth: 2,
            dim: 8,
            heads: 2,
            mlp_ratio: 4.0,
            use_pos_embed: true,
            init_seed: 3,
        }
    }

    #[test]
    fn config_validation() {
        let mut c = tiny();
        c.depth = 0;
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.heads = 3;
        assert!(c.validate().is_err());
        assert_eq!(ProjectorConfig::default_heads(32), 1);
        assert_eq!(ProjectorConfig::default_heads(768), 12);
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let a = init_projector(&tiny(), 4).unwrap();
        let b = init_projector(&tiny(), 4).unwrap();
        assert_eq!(a, b);
        let names: Vec<String> = a.tensors().into_iter().map(|t| t.name).collect();
        assert_eq!(names[0], "pos_embed");
        assert_eq!(names[1], "blocks.0.ln1.scale");
        assert_eq!(names.len(), 1 + 2 * 16);
        assert_eq!(a.num_parameters(), 4 * 8 + 2 * (4 * (64 + 8) + 4 * 8 + (8 * 32 + 32) + (32 * 8 + 8)));
        assert!(a.pos.as_ref().unwrap().iter().all(|&v| v == 0.0));
        assert!(a.blocks[0].ln1_scale.iter().all(|&v| v == 1.0));
        let bound = 1e-3 / (8f32).sqrt();
        assert!(a.blocks[1].o_w.iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn attention_only_blocks_have_no_mlp_tensors() {
        let mut c = tiny();
        c.mlp_ratio = 0.0;
        c.use_pos_embed = false;
        let p = init_projector(&c, 4).unwrap();
        assert_eq!(p.tensors().len(), 2 * 10);
        assert!(p.blocks[0].fc1_w.is_empty());
    }
}
