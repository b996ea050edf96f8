use super::ops::{attention, attention_backward, gelu, gelu_grad, layer_norm, layer_norm_backward, linear, linear_backward, NormCache};
use super::{ProjectorParams, Real, LAYER_NORM_EPS};
use crate::embedding::PatchGrid;
use crate::error::{Error, Result};

struct BlockCache<T> {
    norm1: NormCache<T>,
    a: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    probs: Vec<T>,
    ctx: Vec<T>,
    norm2: Option<NormCache<T>>,
    b: Vec<T>,
    h_pre: Vec<T>,
    h_act: Vec<T>,
}

/// Activations retained by [`ProjectorParams::forward_tokens`] for the backward pass.
pub struct ForwardCache<T> {
    n: usize,
    blocks: Vec<BlockCache<T>>,
}

impl<T> ForwardCache<T> {
    /// Head-major softmax probabilities of block `i`, `[heads][n][n]`.
    pub fn attention_probs(&self, block: usize) -> &[T] {
        &self.blocks[block].probs
    }

    pub fn n_tokens(&self) -> usize {
        self.n
    }
}

impl<T: Real> ProjectorParams<T> {
    fn check_tokens(&self, len: usize) -> Result<usize> {
        let d = self.config.dim;
        if len == 0 || !len.is_multiple_of(d) {
            return Err(Error::Shape(format!("{len} values do not form tokens of dim {d}")));
        }
        let n = len / d;
        if self.pos.is_some() && n != self.n_tokens {
            return Err(Error::Shape(format!(
                "{n} tokens but the positional table holds {}",
                self.n_tokens
            )));
        }
        Ok(n)
    }

    /// Forward over `n × dim` row-major tokens.
    pub fn forward_tokens(&self, input: &[T]) -> Result<(Vec<T>, ForwardCache<T>)> {
        let n = self.check_tokens(input.len())?;
        let d = self.config.dim;
        let heads = self.config.heads;
        let hidden = self.config.mlp_hidden();
        let eps = T::from(LAYER_NORM_EPS).unwrap();

        let mut x = input.to_vec();
        if let Some(pos) = &self.pos {
            for (a, &p) in x.iter_mut().zip(pos) {
                *a = *a + p;
            }
        }
        let mut caches = Vec::with_capacity(self.blocks.len());
        for blk in &self.blocks {
            let (a, norm1) = layer_norm(&x, n, d, &blk.ln1_scale, &blk.ln1_shift, eps);
            let q = linear(&a, n, d, &blk.q_w, &blk.q_b, d);
            let k = linear(&a, n, d, &blk.k_w, &blk.k_b, d);
            let v = linear(&a, n, d, &blk.v_w, &blk.v_b, d);
            let (probs, ctx) = attention(&q, &k, &v, n, d, heads);
            let o = linear(&ctx, n, d, &blk.o_w, &blk.o_b, d);
            for (xv, ov) in x.iter_mut().zip(&o) {
                *xv = *xv + *ov;
            }
            let mut cache = BlockCache {
                norm1,
                a,
                q,
                k,
                v,
                probs,
                ctx,
                norm2: None,
                b: Vec::new(),
                h_pre: Vec::new(),
                h_act: Vec::new(),
            };
            if hidden > 0 {
                let (b, norm2) = layer_norm(&x, n, d, &blk.ln2_scale, &blk.ln2_shift, eps);
                let h_pre = linear(&b, n, d, &blk.fc1_w, &blk.fc1_b, hidden);
                let h_act: Vec<T> = h_pre.iter().map(|&u| gelu(u)).collect();
                let m = linear(&h_act, n, hidden, &blk.fc2_w, &blk.fc2_b, d);
                for (xv, mv) in x.iter_mut().zip(&m) {
                    *xv = *xv + *mv;
                }
                cache.norm2 = Some(norm2);
                cache.b = b;
                cache.h_pre = h_pre;
                cache.h_act = h_act;
            }
            caches.push(cache);
        }
        Ok((x, ForwardCache { n, blocks: caches }))
    }

    /// Reverse pass: accumulates parameter gradients into `grads` and
    /// returns the gradient w.r.t. the input tokens.
    pub fn backward_tokens(&self, cache: &ForwardCache<T>, upstream: &[T], grads: &mut ProjectorParams<T>) -> Result<Vec<T>> {
        let n = cache.n;
        let d = self.config.dim;
        let heads = self.config.heads;
        let hidden = self.config.mlp_hidden();
        if upstream.len() != n * d {
            return Err(Error::Shape(format!(
                "upstream gradient has {} values, expected {}",
                upstream.len(),
                n * d
            )));
        }
        let mut dx = upstream.to_vec();
        for ((blk, c), g) in self.blocks.iter().zip(&cache.blocks).zip(grads.blocks.iter_mut()).rev() {
            if hidden > 0 {
                let dh_act = linear_backward(&c.h_act, &dx, n, hidden, d, &blk.fc2_w, &mut g.fc2_w, &mut g.fc2_b);
                let dh_pre: Vec<T> = dh_act.iter().zip(&c.h_pre).map(|(&gr, &u)| gr * gelu_grad(u)).collect();
                let db = linear_backward(&c.b, &dh_pre, n, d, hidden, &blk.fc1_w, &mut g.fc1_w, &mut g.fc1_b);
                let norm2 = c.norm2.as_ref().expect("mlp blocks cache their norm");
                let dnorm = layer_norm_backward(&db, norm2, n, d, &blk.ln2_scale, &mut g.ln2_scale, &mut g.ln2_shift);
                for (a, b) in dx.iter_mut().zip(&dnorm) {
                    *a = *a + *b;
                }
            }
            let dctx = linear_backward(&c.ctx, &dx, n, d, d, &blk.o_w, &mut g.o_w, &mut g.o_b);
            let (dq, dk, dv) = attention_backward(&c.q, &c.k, &c.v, &c.probs, &dctx, n, d, heads);
            let mut da = linear_backward(&c.a, &dq, n, d, d, &blk.q_w, &mut g.q_w, &mut g.q_b);
            for (path_w, path_b, w, dy) in [
                (&mut g.k_w, &mut g.k_b, &blk.k_w, &dk),
                (&mut g.v_w, &mut g.v_b, &blk.v_w, &dv),
            ] {
                let part = linear_backward(&c.a, dy, n, d, d, w, path_w, path_b);
                for (acc, p) in da.iter_mut().zip(&part) {
                    *acc = *acc + *p;
                }
            }
            let dnorm = layer_norm_backward(&da, &c.norm1, n, d, &blk.ln1_scale, &mut g.ln1_scale, &mut g.ln1_shift);
            for (a, b) in dx.iter_mut().zip(&dnorm) {
                *a = *a + *b;
            }
        }
        if let Some(dpos) = &mut grads.pos {
            for (acc, &g) in dpos.iter_mut().zip(&dx) {
                *acc = *acc + g;
            }
        }
        Ok(dx)
    }
}

fn check_grid(params: &ProjectorParams<f32>, grid: &PatchGrid) -> Result<()> {
    if grid.dim != params.config.dim {
        return Err(Error::Shape(format!(
            "grid dim {} but projector dim {}",
            grid.dim, params.config.dim
        )));
    }
    Ok(())
}

/// `f* = φ(f)`; the output has the input's grid shape.
pub fn forward(params: &ProjectorParams<f32>, grid: &PatchGrid) -> Result<PatchGrid> {
    check_grid(params, grid)?;
    let (out, _) = params.forward_tokens(&grid.data)?;
    Ok(PatchGrid {
        gh: grid.gh,
        gw: grid.gw,
        dim: grid.dim,
        data: out,
    })
}

/// Parameter and input gradients of `<upstream, φ(grid)>`.
pub fn backward(
    params: &ProjectorParams<f32>,
    grid: &PatchGrid,
    upstream: &PatchGrid,
) -> Result<(ProjectorParams<f32>, PatchGrid)> {
    check_grid(params, grid)?;
    grid.check_same_shape(upstream)?;
    let (_, cache) = params.forward_tokens(&grid.data)?;
    let mut grads = params.zeros_like();
    let dx = params.backward_tokens(&cache, &upstream.data, &mut grads)?;
    Ok((
        grads,
        PatchGrid {
            gh: grid.gh,
            gw: grid.gw,
            dim: grid.dim,
            data: dx,
        },
    ))
}
