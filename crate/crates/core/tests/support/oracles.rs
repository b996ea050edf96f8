//! Independent reference implementations shared by the integration and
//! acceptance suites. Nothing here calls into the code paths it checks.
#![allow(dead_code)]

use foundad_core::projector::ProjectorParams;
use foundad_core::Mask;

/// O(n²) pairwise AUROC with half credit for ties.
pub fn pairwise_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            den += 1.0;
            if si > sj {
                num += 1.0;
            } else if si == sj {
                num += 0.5;
            }
        }
    }
    num / den
}

/// Average precision by enumerating every distinct threshold and counting
/// from scratch at each one.
pub fn exhaustive_aupr(scores: &[f64], labels: &[bool]) -> f64 {
    let mut ths: Vec<f64> = scores.to_vec();
    ths.sort_by(|a, b| b.partial_cmp(a).unwrap());
    ths.dedup();
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    for t in ths {
        let (mut tp, mut fp) = (0.0, 0.0);
        for (s, &l) in scores.iter().zip(labels) {
            if *s >= t {
                if l {
                    tp += 1.0;
                } else {
                    fp += 1.0;
                }
            }
        }
        let recall = tp / pos;
        if recall > prev_recall {
            area += (recall - prev_recall) * tp / (tp + fp);
            prev_recall = recall;
        }
    }
    area
}

/// Union-find 8-connectivity partition: returns a canonical region id per
/// pixel (smallest raster index in the region), `usize::MAX` for background.
pub fn union_find_regions(mask: &Mask) -> Vec<usize> {
    let (w, h) = (mask.width, mask.height);
    let mut parent: Vec<usize> = (0..w * h).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            for (dx, dy) in [(-1isize, -1isize), (0, -1), (1, -1), (-1, 0)] {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx < 0 || ny < 0 || nx >= w as isize {
                    continue;
                }
                let (nx, ny) = (nx as usize, ny as usize);
                if mask.get(nx, ny) {
                    let a = find(&mut parent, y * w + x);
                    let b = find(&mut parent, ny * w + nx);
                    let (lo, hi) = (a.min(b), a.max(b));
                    parent[hi] = lo;
                }
            }
        }
    }
    (0..w * h)
        .map(|i| if mask.data[i] != 0 { find(&mut parent, i) } else { usize::MAX })
        .collect()
}

/// PRO by brute force: for every distinct score used as a threshold
/// (`score >= t`), recount region overlaps and false positives over all
/// pixels, then integrate the `(0,0)`-anchored curve up to `cap`.
pub fn brute_force_pro(heatmaps: &[Vec<f32>], masks: &[Mask], cap: f64) -> f64 {
    let mut regions: Vec<Vec<(usize, usize)>> = Vec::new();
    for (img, m) in masks.iter().enumerate() {
        let ids = union_find_regions(m);
        let mut roots: Vec<usize> = ids.iter().copied().filter(|&r| r != usize::MAX).collect();
        roots.sort();
        roots.dedup();
        for r in roots {
            regions.push(
                ids.iter()
                    .enumerate()
                    .filter(|&(_, &v)| v == r)
                    .map(|(i, _)| (img, i))
                    .collect(),
            );
        }
    }
    let mut ths: Vec<f64> = heatmaps.iter().flatten().map(|&v| v as f64).collect();
    ths.sort_by(|a, b| b.partial_cmp(a).unwrap());
    ths.dedup();
    let normal_total: usize = masks.iter().map(|m| m.data.iter().filter(|&&v| v == 0).count()).sum();
    let mut pts = vec![(0.0f64, 0.0f64)];
    for t in ths {
        let mut fp = 0usize;
        for (hm, m) in heatmaps.iter().zip(masks) {
            for (s, &l) in hm.iter().zip(&m.data) {
                if l == 0 && *s as f64 >= t {
                    fp += 1;
                }
            }
        }
        let mut overlap = 0.0;
        for r in &regions {
            let hit = r.iter().filter(|&&(img, i)| heatmaps[img][i] as f64 >= t).count();
            overlap += hit as f64 / r.len() as f64;
        }
        pts.push((fp as f64 / normal_total as f64, overlap / regions.len() as f64));
    }
    let mut area = 0.0;
    for w in pts.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x0 >= cap {
            break;
        }
        if x1 <= cap {
            area += 0.5 * (x1 - x0) * (y0 + y1);
        } else {
            let yc = y0 + (y1 - y0) * (cap - x0) / (x1 - x0);
            area += 0.5 * (cap - x0) * (y0 + yc);
            break;
        }
    }
    area / cap
}

/// Explicit-loop f64 forward pass of the projector (pre-norm blocks,
/// tanh-GELU MLP), written without the crate's kernels.
pub fn scalar_forward(p: &ProjectorParams<f32>, x: &[f32]) -> Vec<f64> {
    let d = p.config.dim;
    let n = x.len() / d;
    let heads = p.config.heads;
    let dh = d / heads;
    let hidden = p.config.mlp_hidden();
    let w = |v: &Vec<f32>, i: usize| v[i] as f64;
    let mut t: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..d)
                .map(|c| x[i * d + c] as f64 + p.pos.as_ref().map_or(0.0, |pp| pp[i * d + c] as f64))
                .collect()
        })
        .collect();
    let norm = |row: &Vec<f64>, g: &Vec<f32>, b: &Vec<f32>| -> Vec<f64> {
        let mean: f64 = row.iter().sum::<f64>() / d as f64;
        let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        (0..d)
            .map(|c| (row[c] - mean) / (var + 1e-6).sqrt() * g[c] as f64 + b[c] as f64)
            .collect()
    };
    for blk in &p.blocks {
        let a: Vec<Vec<f64>> = t.iter().map(|r| norm(r, &blk.ln1_scale, &blk.ln1_shift)).collect();
        let proj = |wm: &Vec<f32>, bv: &Vec<f32>| -> Vec<Vec<f64>> {
            a.iter()
                .map(|r| {
                    (0..d)
                        .map(|o| w(bv, o) + (0..d).map(|i| r[i] * w(wm, i * d + o)).sum::<f64>())
                        .collect()
                })
                .collect()
        };
        let (q, k, v) = (proj(&blk.q_w, &blk.q_b), proj(&blk.k_w, &blk.k_b), proj(&blk.v_w, &blk.v_b));
        let mut ctx = vec![vec![0.0f64; d]; n];
        for h in 0..heads {
            for i in 0..n {
                let mut s: Vec<f64> = (0..n)
                    .map(|j| (0..dh).map(|c| q[i][h * dh + c] * k[j][h * dh + c]).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = s.iter().map(|v| (v - m).exp()).sum();
                s.iter_mut().for_each(|v| *v = (*v - m).exp() / z);
                for c in 0..dh {
                    ctx[i][h * dh + c] = (0..n).map(|j| s[j] * v[j][h * dh + c]).sum();
                }
            }
        }
        for i in 0..n {
            for o in 0..d {
                t[i][o] += w(&blk.o_b, o) + (0..d).map(|c| ctx[i][c] * w(&blk.o_w, c * d + o)).sum::<f64>();
            }
        }
        if hidden > 0 {
            for i in 0..n {
                let b = norm(&t[i], &blk.ln2_scale, &blk.ln2_shift);
                let hid: Vec<f64> = (0..hidden)
                    .map(|j| {
                        let u = w(&blk.fc1_b, j) + (0..d).map(|c| b[c] * w(&blk.fc1_w, c * hidden + j)).sum::<f64>();
                        0.5 * u * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (u + 0.044715 * u.powi(3))).tanh())
                    })
                    .collect();
                for o in 0..d {
                    t[i][o] += w(&blk.fc2_b, o) + (0..hidden).map(|j| hid[j] * w(&blk.fc2_w, j * d + o)).sum::<f64>();
                }
            }
        }
    }
    t.into_iter().flatten().collect()
}

/// Worst elementwise relative error of analytic vs central-difference
/// gradients of `Σ upstream ⊙ forward(x)`, per parameter tensor and for the
/// input.
pub fn gradient_check(p: &ProjectorParams<f64>, x: &[f64], up: &[f64], h: f64) -> Vec<(String, f64)> {
    let loss = |q: &ProjectorParams<f64>, xi: &[f64]| -> f64 {
        let (out, _) = q.forward_tokens(xi).unwrap();
        out.iter().zip(up).map(|(a, b)| a * b).sum()
    };
    let (_, cache) = p.forward_tokens(x).unwrap();
    let mut grads = p.zeros_like();
    let dx = p.backward_tokens(&cache, up, &mut grads).unwrap();

    let rel = |a: f64, n: f64| {
        // Gradients that vanish identically (key biases under softmax
        // shift-invariance) leave only roundoff in the difference quotient.
        (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
    };
    let mut report = Vec::new();
    let names: Vec<String> = p.tensors().into_iter().map(|t| t.name).collect();
    let analytic: Vec<Vec<f64>> = grads.tensors().into_iter().map(|t| t.data.to_vec()).collect();
    for (ti, name) in names.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for e in 0..analytic[ti].len() {
            let mut plus = p.clone();
            plus.tensors_mut()[ti][e] += h;
            let mut minus = p.clone();
            minus.tensors_mut()[ti][e] -= h;
            let fd = (loss(&plus, x) - loss(&minus, x)) / (2.0 * h);
            worst = worst.max(rel(analytic[ti][e], fd));
        }
        report.push((name.clone(), worst));
    }
    let mut worst: f64 = 0.0;
    for e in 0..x.len() {
        let mut xp = x.to_vec();
        xp[e] += h;
        let mut xm = x.to_vec();
        xm[e] -= h;
        worst = worst.max(rel(dx[e], (loss(p, &xp) - loss(p, &xm)) / (2.0 * h)));
    }
    report.push(("input".into(), worst));
    report
}
