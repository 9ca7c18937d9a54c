use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use mafl_bench::{random_matrix, scored_labels, training_step_fixture};
use mafl_core::metrics::{average_precision, roc_auc};
use mafl_core::model::ModelSpec;
use mafl_core::numerics::rng::RngStream;
use mafl_core::training::{adversarial_phase_step, bias_phase_step};
use mafl_core::Mlp;

fn matmul(c: &mut Criterion) {
    let a = random_matrix(256, 256, 1);
    let b = random_matrix(256, 128, 2);
    c.bench_function("matmul 256x256x128", |bench| bench.iter(|| black_box(&a).matmul(black_box(&b)).unwrap()));
    c.bench_function("matmul_tn 256x256x128", |bench| bench.iter(|| a.matmul_tn(&b).unwrap()));
}

fn mlp(c: &mut Criterion) {
    let spec = ModelSpec::new(64, 4);
    let mut net: Mlp<f32> = Mlp::init(&spec.extractor_dims(), &mut RngStream::new(3)).unwrap();
    let x = random_matrix(256, 64, 4);
    c.bench_function("extractor forward 256x64", |bench| bench.iter(|| net.forward(black_box(&x)).unwrap()));
    let out = net.forward_record(&x).unwrap();
    let upstream = random_matrix(out.rows(), out.cols(), 5);
    c.bench_function("extractor forward+backward 256x64", |bench| {
        bench.iter(|| {
            net.forward_record(&x).unwrap();
            net.backward(&upstream).unwrap()
        })
    });
}

fn training_steps(c: &mut Criterion) {
    let (ck, batch, cfg) = training_step_fixture();
    c.bench_function("bias phase (3 updates)", |bench| {
        bench.iter_batched(
            || ck.clone(),
            |mut ck| bias_phase_step(&mut ck, &batch, &cfg, |_, _| Ok(())).unwrap(),
            BatchSize::LargeInput,
        )
    });
    c.bench_function("adversarial phase (1 update)", |bench| {
        bench.iter_batched(
            || ck.clone(),
            |mut ck| adversarial_phase_step(&mut ck, &batch, 20, &cfg, |_, _| Ok(())).unwrap(),
            BatchSize::LargeInput,
        )
    });
}

fn ranking(c: &mut Criterion) {
    let (s, y) = scored_labels(10_000, 6);
    c.bench_function("average_precision n=10000", |bench| bench.iter(|| average_precision(&s, &y).unwrap()));
    c.bench_function("roc_auc n=10000", |bench| bench.iter(|| roc_auc(&s, &y).unwrap()));
}

criterion_group!(benches, matmul, mlp, training_steps, ranking);
criterion_main!(benches);
