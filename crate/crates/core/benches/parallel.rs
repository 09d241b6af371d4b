//! Data-parallel kernels on a one-thread pool versus the default pool.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dfm_core::decoder::{backward, init_weights, pack_inputs, pack_targets, DecoderConfig, DecoderWeights};
use dfm_core::face3d::{make_synthetic_model, render_with_masks};
use dfm_core::semantics::{smooth_track, CoeffTrack};
use dfm_core::synth::synth_dataset;
use dfm_core::ExprCoeffs;

fn pools() -> Vec<(&'static str, Option<rayon::ThreadPool>)> {
    vec![
        ("one-thread", Some(rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap())),
        ("default", None),
    ]
}

fn run<R: Send>(pool: &Option<rayon::ThreadPool>, f: impl FnOnce() -> R + Send) -> R {
    match pool {
        Some(p) => p.install(f),
        None => f(),
    }
}

fn bench(c: &mut Criterion) {
    let data = synth_dataset(1, 512, 0.01);
    let w: DecoderWeights<f32> = init_weights(&DecoderConfig::desk()).unwrap();
    let inputs: Vec<f32> = pack_inputs(&data.va_points());
    let targets: Vec<f32> = pack_targets(&data.exprs());
    let model = make_synthetic_model(1, 5000).unwrap();
    let mesh = model.eval_mesh(&ExprCoeffs([0.3; 30]));
    let track = CoeffTrack {
        frames: data.exprs().into_iter().cycle().take(3000).collect(),
    };

    let mut g = c.benchmark_group("kernels");
    g.sample_size(10);
    for (name, pool) in pools() {
        g.bench_with_input(BenchmarkId::new("backward_512", name), &(), |b, _| {
            b.iter(|| run(&pool, || backward(&w, &inputs, &targets, None).unwrap()))
        });
        g.bench_with_input(BenchmarkId::new("render_256", name), &(), |b, _| {
            b.iter(|| run(&pool, || render_with_masks(&model, &mesh, 256, 256).unwrap()))
        });
        g.bench_with_input(BenchmarkId::new("smooth_3000x30", name), &(), |b, _| {
            b.iter(|| run(&pool, || smooth_track(&track, 5.0)))
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
