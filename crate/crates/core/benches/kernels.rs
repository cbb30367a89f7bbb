use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng;

use leafnet::data::{batches, synthetic_blobs, SyntheticTask};
use leafnet::densenet::{build_model, DenseNetConfig, HeadConfig};
use leafnet::experiment::Trainer;
use leafnet::optim::OptimizerHyper;
use leafnet::par::set_parallel;
use leafnet::tensor::matmul_into;
use leafnet::{seed, Tape, Tensor};

const MODES: [(&str, bool); 2] = [("parallel", true), ("sequential", false)];

fn random(shape: &[usize], s: u64) -> Tensor<f32> {
    let mut rng = seed::rng(s, &[]);
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for n in [64usize, 256] {
        let a = random(&[n, n], 1);
        let b = random(&[n, n], 2);
        let mut out = vec![0f32; n * n];
        for (mode, on) in MODES {
            set_parallel(on);
            group.bench_with_input(BenchmarkId::new(mode, n), &n, |bench, &n| {
                bench.iter(|| matmul_into(black_box(a.data()), black_box(b.data()), n, n, n, &mut out))
            });
        }
    }
    group.finish();
    set_parallel(true);
}

fn conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv2d_fwd_bwd");
    let x = random(&[8, 32, 16, 16], 3);
    let w = random(&[32, 32, 3, 3], 4);
    for (mode, on) in MODES {
        set_parallel(on);
        group.bench_function(mode, |bench| {
            bench.iter(|| {
                let mut tape = Tape::new();
                let xv = tape.param(x.clone());
                let wv = tape.param(w.clone());
                let y = tape.conv2d(xv, wv, 1, 1).unwrap();
                let loss = tape.sum(y).unwrap();
                black_box(tape.backward(loss).unwrap())
            })
        });
    }
    group.finish();
    set_parallel(true);
}

fn train_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("toy_train_step");
    group.sample_size(20);
    let ds = synthetic_blobs(SyntheticTask::B, 11, 32, 5).unwrap();
    let batch = batches(&ds, 32, false, 0, 0).unwrap().next().unwrap();
    let model = build_model(&DenseNetConfig::toy(), &HeadConfig::new(32, 0.1, 3), 6).unwrap();
    for (mode, on) in MODES {
        set_parallel(on);
        let mut trainer = Trainer::new(model.clone(), OptimizerHyper::adam(), 7, 32, None).unwrap();
        group.bench_function(mode, |bench| bench.iter(|| black_box(trainer.step(&batch, 0).unwrap())));
    }
    group.finish();
    set_parallel(true);
}

criterion_group!(benches, matmul, conv, train_step);
criterion_main!(benches);
