//! Dense kernels for the projector. Matrices are row-major slices.

use super::Real;

/// `x[n×din] · w[din×dout] + b`.
pub(super) fn linear<T: Real>(x: &[T], n: usize, din: usize, w: &[T], b: &[T], dout: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(n * dout);
    for _ in 0..n {
        out.extend_from_slice(b);
    }
    for i in 0..n {
        let row = &mut out[i * dout..(i + 1) * dout];
        for (p, &xv) in x[i * din..(i + 1) * din].iter().enumerate() {
            if xv == T::zero() {
                continue;
            }
            for (o, &wv) in row.iter_mut().zip(&w[p * dout..(p + 1) * dout]) {
                *o = *o + xv * wv;
            }
        }
    }
    out
}

/// Accumulates `dw += xᵀ dy`, `db += colsum(dy)` and returns `dx = dy wᵀ`.
#[allow(clippy::too_many_arguments)]
pub(super) fn linear_backward<T: Real>(
    x: &[T],
    dy: &[T],
    n: usize,
    din: usize,
    dout: usize,
    w: &[T],
    dw: &mut [T],
    db: &mut [T],
) -> Vec<T> {
    let mut dx = vec![T::zero(); n * din];
    for i in 0..n {
        let dyr = &dy[i * dout..(i + 1) * dout];
        for (acc, &g) in db.iter_mut().zip(dyr) {
            *acc = *acc + g;
        }
        let xr = &x[i * din..(i + 1) * din];
        let dxr = &mut dx[i * din..(i + 1) * din];
        for p in 0..din {
            let wr = &w[p * dout..(p + 1) * dout];
            dxr[p] = wr.iter().zip(dyr).map(|(&a, &b)| a * b).sum();
            let xv = xr[p];
            if xv != T::zero() {
                for (acc, &g) in dw[p * dout..(p + 1) * dout].iter_mut().zip(dyr) {
                    *acc = *acc + xv * g;
                }
            }
        }
    }
    dx
}

/// Normalized rows and reciprocal standard deviations kept for backward.
pub(super) struct NormCache<T> {
    pub xhat: Vec<T>,
    pub rstd: Vec<T>,
}

pub(super) fn layer_norm<T: Real>(x: &[T], n: usize, d: usize, scale: &[T], shift: &[T], eps: T) -> (Vec<T>, NormCache<T>) {
    let dt = T::from(d).unwrap();
    let mut y = vec![T::zero(); n * d];
    let mut xhat = vec![T::zero(); n * d];
    let mut rstd = vec![T::zero(); n];
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().copied().sum::<T>() / dt;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dt;
        let r = T::one() / (var + eps).sqrt();
        rstd[i] = r;
        for c in 0..d {
            let h = (row[c] - mean) * r;
            xhat[i * d + c] = h;
            y[i * d + c] = h * scale[c] + shift[c];
        }
    }
    (y, NormCache { xhat, rstd })
}

pub(super) fn layer_norm_backward<T: Real>(
    dy: &[T],
    cache: &NormCache<T>,
    n: usize,
    d: usize,
    scale: &[T],
    dscale: &mut [T],
    dshift: &mut [T],
) -> Vec<T> {
    let dt = T::from(d).unwrap();
    let mut dx = vec![T::zero(); n * d];
    let mut dxhat = vec![T::zero(); d];
    for i in 0..n {
        let xh = &cache.xhat[i * d..(i + 1) * d];
        let g = &dy[i * d..(i + 1) * d];
        let (mut sum, mut dot) = (T::zero(), T::zero());
        for c in 0..d {
            dscale[c] = dscale[c] + g[c] * xh[c];
            dshift[c] = dshift[c] + g[c];
            dxhat[c] = g[c] * scale[c];
            sum = sum + dxhat[c];
            dot = dot + dxhat[c] * xh[c];
        }
        let r = cache.rstd[i] / dt;
        for c in 0..d {
            dx[i * d + c] = r * (dt * dxhat[c] - sum - xh[c] * dot);
        }
    }
    dx
}

fn gelu_consts<T: Real>() -> (T, T) {
    (T::from(0.797_884_560_802_865_4).unwrap(), T::from(0.044715).unwrap())
}

/// tanh-approximated GELU.
pub(super) fn gelu<T: Real>(x: T) -> T {
    let (c, k) = gelu_consts::<T>();
    let half = T::from(0.5).unwrap();
    half * x * (T::one() + (c * (x + k * x * x * x)).tanh())
}

pub(super) fn gelu_grad<T: Real>(x: T) -> T {
    let (c, k) = gelu_consts::<T>();
    let half = T::from(0.5).unwrap();
    let three = T::from(3.0).unwrap();
    let t = (c * (x + k * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * k * x * x)
}

/// Per-head softmax probabilities `[heads][n][n]` and the concatenated context.
pub(super) fn attention<T: Real>(q: &[T], k: &[T], v: &[T], n: usize, d: usize, heads: usize) -> (Vec<T>, Vec<T>) {
    let dh = d / heads;
    let scale = T::one() / T::from(dh).unwrap().sqrt();
    let mut probs = vec![T::zero(); heads * n * n];
    let mut ctx = vec![T::zero(); n * d];
    for h in 0..heads {
        let off = h * dh;
        let p = &mut probs[h * n * n..(h + 1) * n * n];
        for i in 0..n {
            let qi = &q[i * d + off..i * d + off + dh];
            let row = &mut p[i * n..(i + 1) * n];
            let mut max = T::neg_infinity();
            for j in 0..n {
                let kj = &k[j * d + off..j * d + off + dh];
                let s = qi.iter().zip(kj).map(|(&a, &b)| a * b).sum::<T>() * scale;
                row[j] = s;
                max = max.max(s);
            }
            let mut z = T::zero();
            for s in row.iter_mut() {
                *s = (*s - max).exp();
                z = z + *s;
            }
            for s in row.iter_mut() {
                *s = *s / z;
            }
            let ci = &mut ctx[i * d + off..i * d + off + dh];
            for j in 0..n {
                let pij = row[j];
                for (c, &vv) in ci.iter_mut().zip(&v[j * d + off..j * d + off + dh]) {
                    *c = *c + pij * vv;
                }
            }
        }
    }
    (probs, ctx)
}

/// Gradients of [`attention`] w.r.t. `q`, `k`, `v` given `dctx`.
pub(super) fn attention_backward<T: Real>(
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    dctx: &[T],
    n: usize,
    d: usize,
    heads: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let dh = d / heads;
    let scale = T::one() / T::from(dh).unwrap().sqrt();
    let mut dq = vec![T::zero(); n * d];
    let mut dk = vec![T::zero(); n * d];
    let mut dv = vec![T::zero(); n * d];
    let mut ds = vec![T::zero(); n];
    for h in 0..heads {
        let off = h * dh;
        let p = &probs[h * n * n..(h + 1) * n * n];
        for i in 0..n {
            let gi = &dctx[i * d + off..i * d + off + dh];
            let row = &p[i * n..(i + 1) * n];
            // dP_ij = dctx_i · v_j, then softmax Jacobian.
            let mut weighted = T::zero();
            for j in 0..n {
                let vj = &v[j * d + off..j * d + off + dh];
                let dp = gi.iter().zip(vj).map(|(&a, &b)| a * b).sum::<T>();
                ds[j] = dp;
                weighted = weighted + dp * row[j];
            }
            for j in 0..n {
                ds[j] = row[j] * (ds[j] - weighted) * scale;
            }
            let qi = &q[i * d + off..i * d + off + dh];
            for j in 0..n {
                let (pij, sij) = (row[j], ds[j]);
                let kj = &k[j * d + off..j * d + off + dh];
                for c in 0..dh {
                    dq[i * d + off + c] = dq[i * d + off + c] + sij * kj[c];
                    dk[j * d + off + c] = dk[j * d + off + c] + sij * qi[c];
                    dv[j * d + off + c] = dv[j * d + off + c] + pij * gi[c];
                }
            }
        }
    }
    (dq, dk, dv)
}
