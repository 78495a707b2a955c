use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mpsams::model::{init_weights, reconstruct, reconstruction_gradients, ModelWeights, NetConfig};
use mpsams_bench::image;

fn nets() -> Vec<(&'static str, NetConfig)> {
    vec![
        (
            "small",
            NetConfig {
                base_channels: 4,
                depth: 2,
                convs_per_stage: 1,
                ..NetConfig::default()
            },
        ),
        ("default", NetConfig::default()),
    ]
}

fn unet(c: &mut Criterion) {
    let (img, _) = image(64, 1);
    let mask: Vec<bool> = (0..64 * 64).map(|i| (i / 64 / 8 + i % 64 / 8) % 2 == 0).collect();
    let mut g = c.benchmark_group("unet_64x64");
    g.sample_size(20);
    for (name, cfg) in nets() {
        let w: ModelWeights = init_weights(&cfg, 0).unwrap();
        g.bench_with_input(BenchmarkId::new("forward", name), &w, |b, w| b.iter(|| reconstruct(&img, w).unwrap()));
        g.bench_with_input(BenchmarkId::new("forward_backward", name), &w, |b, w| {
            b.iter(|| reconstruction_gradients(w, &img, &img, &mask).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, unet);
criterion_main!(benches);
