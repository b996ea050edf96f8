//! Seeded random inputs for metric checks.
#![allow(dead_code)]

use foundad_core::metrics::{ProInput, ScoredSet};
use foundad_core::{Mask, SplitMix64};

/// Random labelled scores with coarse quantization so ties occur.
pub fn random_set(rng: &mut SplitMix64) -> ScoredSet {
    let n = 2 + rng.below(199) as usize;
    let levels = 1 + rng.below(40);
    let mut set = ScoredSet::default();
    for i in 0..n {
        let label = if i == 0 {
            true
        } else if i == 1 {
            false
        } else {
            rng.bernoulli(0.4)
        };
        let shift = if label { 0.3 } else { 0.0 };
        let s = ((rng.next_f64() + shift) * levels as f64).floor() / levels as f64;
        set.push(s, label);
    }
    set
}

pub fn random_blob_mask(rng: &mut SplitMix64, w: usize, h: usize) -> Mask {
    let mut m = Mask::new(w, h);
    for _ in 0..1 + rng.below(3) {
        let (bw, bh) = (2 + rng.below(10) as usize, 2 + rng.below(10) as usize);
        let (x0, y0) = (rng.below((w - bw) as u64) as usize, rng.below((h - bh) as u64) as usize);
        for y in y0..y0 + bh {
            for x in x0..x0 + bw {
                if rng.bernoulli(0.9) {
                    m.set(x, y, true);
                }
            }
        }
    }
    m
}

pub fn random_pro_input(rng: &mut SplitMix64) -> ProInput {
    let mut input = ProInput::default();
    for _ in 0..3 {
        let mask = random_blob_mask(rng, 32, 32);
        let heat = mask
            .data
            .iter()
            .map(|&l| (rng.next_f64() + if l != 0 { 0.4 } else { 0.0 }) as f32)
            .collect();
        input.push(heat, mask).unwrap();
    }
    input
}
