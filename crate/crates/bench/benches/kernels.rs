use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use productae::channel::power_normalize;
use productae::nn::{Fcnn, FcnnShape};
use productae::{ModelConfig, ProductAe, Tape};
use productae_bench::{fixed_batch, random_tensor};
use std::hint::black_box;

fn matmul(c: &mut Criterion) {
    let mut g = c.benchmark_group("matmul_f32");
    for (m, k, n) in [(500, 64, 64), (3500, 64, 64), (5000, 250, 250)] {
        let a = random_tensor::<f32>(&[m, k], 1);
        let b = random_tensor::<f32>(&[k, n], 2);
        g.bench_with_input(
            BenchmarkId::from_parameter(format!("{m}x{k}x{n}")),
            &(a, b),
            |bench, (a, b)| {
                bench.iter(|| {
                    let mut tape = Tape::new();
                    let av = tape.constant(a.clone());
                    let bv = tape.constant(b.clone());
                    black_box(tape.matmul(av, bv).unwrap());
                })
            },
        );
    }
    g.finish();
}

fn fcnn(c: &mut Criterion) {
    let net = Fcnn::<f32>::new(FcnnShape::new(14, 8, 3, 64), 3).unwrap();
    let x = random_tensor::<f32>(&[500, 7, 14], 4);
    c.bench_function("fcnn_forward_backward_500x7", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let y = net.forward(&mut tape, xv).unwrap();
            let s = tape.mean(y);
            black_box(tape.backward(s).unwrap());
        })
    });
}

fn normalize(c: &mut Criterion) {
    let x = random_tensor::<f32>(&[500, 49], 5);
    c.bench_function("power_normalize_500x49", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let xv = tape.input(x.clone(), true);
            let p = power_normalize(&mut tape, xv).unwrap();
            let s = tape.sum(p);
            black_box(tape.backward(s).unwrap());
        })
    });
}

fn product_ae(c: &mut Criterion) {
    let cfg = ModelConfig::desk();
    let model = ProductAe::<f32>::new(cfg, 6).unwrap();
    let batch = fixed_batch::<f32>(&cfg, 500, 2.0, 7).unwrap();
    let mut g = c.benchmark_group("desk_product_ae_500");
    g.bench_function("forward", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            black_box(
                model
                    .forward_loss(&mut tape, &batch.messages, &batch.noise)
                    .unwrap(),
            );
        })
    });
    g.bench_function("forward_backward", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let (_, loss) = model
                .forward_loss(&mut tape, &batch.messages, &batch.noise)
                .unwrap();
            black_box(tape.backward(loss).unwrap());
        })
    });
    g.finish();
}

criterion_group!(benches, matmul, fcnn, normalize, product_ae);
criterion_main!(benches);
