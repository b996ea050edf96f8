use criterion::{black_box, criterion_group, criterion_main, Criterion};
use foundad_bench::{pro_input, random_grid, scored_set};
use foundad_core::metrics::{auroc, pro, ThresholdSweep};
use foundad_core::projector::{backward, forward, init_projector};
use foundad_core::ProjectorConfig;

fn projector(c: &mut Criterion) {
    let mut cfg = ProjectorConfig::new(64);
    cfg.depth = 2;
    let params = init_projector(&cfg, 32 * 32).unwrap();
    let grid = random_grid(32, 32, 64, 1);
    let upstream = random_grid(32, 32, 64, 2);
    c.bench_function("projector forward 32x32x64 depth 2", |b| {
        b.iter(|| forward(black_box(&params), black_box(&grid)).unwrap())
    });
    c.bench_function("projector backward 32x32x64 depth 2", |b| {
        b.iter(|| backward(black_box(&params), black_box(&grid), black_box(&upstream)).unwrap())
    });
}

fn metrics(c: &mut Criterion) {
    let set = scored_set(100_000, 3);
    c.bench_function("auroc 100k scores", |b| b.iter(|| auroc(black_box(&set)).unwrap()));
    let input = pro_input(8, 128, 4);
    c.bench_function("pro 8x128x128 linear 200", |b| {
        b.iter(|| pro(black_box(&input), 0.3, ThresholdSweep::Linear(200)).unwrap())
    });
}

criterion_group!(benches, projector, metrics);
criterion_main!(benches);
