use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use anomalyzer_core::anomalyzer::fit;
use anomalyzer_core::baselines::{features, train_svm, KernelSpec, SmoOptions};
use anomalyzer_core::gridstats::{anova_f, cell_means};
use anomalyzer_core::synth::{generate_set, SynthPlan, SynthSpec};
use anomalyzer_core::{FitOptions, LabeledImage};

fn synthetic(count: usize, size: usize) -> Vec<LabeledImage> {
    let spec = SynthSpec {
        size,
        seed: 1,
        ..SynthSpec::default()
    };
    let plan = SynthPlan {
        count,
        ..SynthPlan::default()
    };
    generate_set(&spec, &plan)
        .unwrap()
        .into_iter()
        .map(|s| LabeledImage::new(s.name, s.pixels, s.label))
        .collect()
}

fn grid_statistics(c: &mut Criterion) {
    let img = synthetic(1, 512).remove(0);
    let mut group = c.benchmark_group("cell_means");
    for n in [16, 32] {
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            b.iter(|| cell_means(black_box(&img.pixels), n).unwrap())
        });
    }
    group.finish();

    let a: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
    let z: Vec<f64> = (0..100).map(|i| (i as f64 * 0.11).cos() + 0.2).collect();
    c.bench_function("anova_f/100+100", |b| {
        b.iter(|| anova_f(&[black_box(&a), black_box(&z)]).unwrap())
    });
}

fn band_search(c: &mut Criterion) {
    let train = synthetic(60, 256);
    let mut group = c.benchmark_group("fit");
    group.sample_size(10);
    group.bench_function("60 images, 16x16 grid", |b| {
        b.iter(|| fit(black_box(&train), &FitOptions::default()).unwrap())
    });
    group.finish();
}

fn smo(c: &mut Criterion) {
    let images = synthetic(120, 256);
    let x = features(&images, 32).unwrap();
    let y: Vec<bool> = images.iter().map(|i| i.label.is_anomalous()).collect();
    let mut group = c.benchmark_group("svm");
    group.sample_size(10);
    group.bench_function("rbf, 120 x 1024 features", |b| {
        b.iter(|| train_svm(black_box(&x), &y, 1.0, &KernelSpec::rbf(1.0 / 1024.0), &SmoOptions::default()).unwrap())
    });
    group.finish();
}

criterion_group!(benches, grid_statistics, band_search, smo);
criterion_main!(benches);
