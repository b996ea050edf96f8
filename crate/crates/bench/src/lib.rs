//! Shared inputs for the criterion benches.

use foundad_core::metrics::{ProInput, ScoredSet};
use foundad_core::{Mask, PatchGrid, SplitMix64};

/// Standard-normal patch grid.
pub fn random_grid(gh: usize, gw: usize, dim: usize, seed: u64) -> PatchGrid {
    let mut rng = SplitMix64::new(seed);
    PatchGrid::new(gh, gw, dim, (0..gh * gw * dim).map(|_| rng.normal() as f32).collect())
        .expect("grid dimensions are consistent")
}

/// `n` scores with roughly one positive in four; positives are shifted up.
pub fn scored_set(n: usize, seed: u64) -> ScoredSet {
    let mut rng = SplitMix64::new(seed);
    let mut set = ScoredSet::default();
    for _ in 0..n {
        let anomalous = rng.below(4) == 0;
        set.push(rng.normal() + if anomalous { 1.0 } else { 0.0 }, anomalous);
    }
    set
}

/// `images` heatmaps of `side`² pixels, each with one square defect that the
/// heatmap partially covers.
pub fn pro_input(images: usize, side: usize, seed: u64) -> ProInput {
    let mut rng = SplitMix64::new(seed);
    let mut input = ProInput::default();
    let (lo, hi) = (side / 4, side / 2);
    for _ in 0..images {
        let mut mask = Mask::new(side, side);
        let mut heat = vec![0.0f32; side * side];
        for y in 0..side {
            for x in 0..side {
                let inside = (lo..hi).contains(&x) && (lo..hi).contains(&y);
                if inside {
                    mask.set(x, y, true);
                }
                heat[y * side + x] = rng.next_f64() as f32 + if inside { 0.5 } else { 0.0 };
            }
        }
        input.push(heat, mask).expect("heatmap matches mask");
    }
    input
}
