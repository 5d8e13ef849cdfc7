use criterion::{black_box, criterion_group, criterion_main, Criterion};

use panogan::dataio::{duplicate_rotate, polar, synthetic};

fn preprocess(c: &mut Criterion) {
    let aerial = synthetic::generate(1, 256, 64, 0).unwrap().remove(0).aerial;
    let mut group = c.benchmark_group("preprocess");
    group.bench_function("polar_256_to_64x256", |b| b.iter(|| polar(black_box(&aerial), 64, 256).unwrap()));
    group.bench_function("duplicate_rotate_256_to_64", |b| {
        b.iter(|| duplicate_rotate(black_box(&aerial), 64).unwrap())
    });
    group.finish();
}

criterion_group!(benches, preprocess);
criterion_main!(benches);
