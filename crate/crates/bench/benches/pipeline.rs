//! Kernel and end-to-end timings on small and reference-size scenes.

use std::hint::black_box;

use bdsense::harness::{run_estimators, PipelineOptions};
use bdsense::ksa::{filter_for, ksa_rank_k};
use bdsense::scenario::{stream_rng, synthesize, Stream};
use bdsense::tensor::{khatri_rao, kron, unfold};
use bdsense::{c64, ArrayGeometry, CMat, Estimator, Mode, ScenarioConfig, Scene, Tensor3};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn mat(r: usize, c: usize) -> CMat {
    CMat::from_fn(r, c, |i, j| {
        c64::new((i as f64 * 0.7).sin(), (j as f64 * 1.3).cos())
    })
}

fn small() -> ScenarioConfig {
    ScenarioConfig {
        st: ArrayGeometry { n_y: 2, n_z: 2 },
        ris: ArrayGeometry { n_y: 3, n_z: 3 },
        sr: ArrayGeometry { n_y: 3, n_z: 3 },
        q: 4,
        m: 4,
        t: 96,
        min_separation_deg: 15.0,
        ..ScenarioConfig::default()
    }
}

fn kernels(c: &mut Criterion) {
    let a = mat(16, 16);
    let b = mat(16, 16);
    c.bench_function("kron 16x16 ⊗ 16x16", |bch| {
        bch.iter(|| kron(black_box(a.as_ref()), black_box(b.as_ref())))
    });
    let (p, q) = (mat(64, 2), mat(256, 2));
    c.bench_function("khatri_rao 64x2 ⋄ 256x2", |bch| {
        bch.iter(|| khatri_rao(black_box(p.as_ref()), black_box(q.as_ref())).unwrap())
    });
    let t = Tensor3::from_fn([16, 16, 64], |i, j, r| c64::new(i as f64, (j + r) as f64));
    for mode in Mode::ALL {
        c.bench_with_input(
            BenchmarkId::new("unfold 16x16x64", format!("{mode:?}")),
            &mode,
            |bch, &m| bch.iter(|| unfold(black_box(&t), m)),
        );
    }
}

fn stages(c: &mut Criterion) {
    let mut g = c.benchmark_group("reference");
    g.sample_size(10);
    let cfg = ScenarioConfig::default();
    let scene = Scene::generate(&cfg).unwrap();
    let rx = synthesize(&scene, Some(20.0), &mut stream_rng(0, Stream::Noise));
    g.bench_function("filter", |bch| {
        bch.iter(|| filter_for(&cfg, black_box(&rx.y), &scene.schedule).unwrap())
    });
    let f = filter_for(&cfg, &rx.y, &scene.schedule).unwrap();
    g.bench_function("ksa", |bch| {
        bch.iter(|| ksa_rank_k(black_box(&f), cfg.l_sr(), cfg.k).unwrap())
    });
    g.finish();
}

fn end_to_end(c: &mut Criterion) {
    let mut g = c.benchmark_group("pipeline");
    g.sample_size(10);
    let cfg = small();
    let scene = Scene::generate(&cfg).unwrap();
    let rx = synthesize(&scene, Some(20.0), &mut stream_rng(0, Stream::Noise));
    let opts = PipelineOptions::default();
    for est in Estimator::ALL {
        g.bench_with_input(BenchmarkId::new("small", est.name()), &est, |bch, &e| {
            bch.iter(|| {
                run_estimators(
                    &cfg,
                    black_box(&rx.y),
                    &scene.pilots,
                    &scene.schedule,
                    &[e],
                    &opts,
                )
                .unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, kernels, stages, end_to_end);
criterion_main!(benches);
