use std::hint::black_box;

use ccnet_bench::{random_tensor, rng};
use ccnet_core::layers::MultiHeadAttention;
use ccnet_core::{Graph, ParamStore};
use criterion::{criterion_group, criterion_main, Criterion};

fn matmul(c: &mut Criterion) {
    let mut r = rng(0);
    let a = random_tensor(&mut r, &[64, 256]);
    let b = random_tensor(&mut r, &[256, 64]);
    c.bench_function("matmul 64x256x64", |bench| {
        bench.iter(|| {
            let mut g = Graph::<f32>::new();
            let (x, y) = (g.input(a.clone()), g.input(b.clone()));
            black_box(g.matmul(x, y).unwrap());
        })
    });
}

fn conv(c: &mut Criterion) {
    let mut r = rng(1);
    let x = random_tensor(&mut r, &[64, 256]);
    let w = random_tensor(&mut r, &[3, 256, 32]);
    let b = random_tensor(&mut r, &[32]);
    c.bench_function("conv1d k3 256->32 T=64", |bench| {
        bench.iter(|| {
            let mut g = Graph::<f32>::new();
            let (x, w, b) = (g.input(x.clone()), g.input(w.clone()), g.input(b.clone()));
            black_box(g.conv1d(x, w, b, 1, 1).unwrap());
        })
    });
}

fn attention(c: &mut Criterion) {
    let mut r = rng(2);
    let mut store = ParamStore::<f32>::new();
    let mha = MultiHeadAttention::new(&mut store, &mut r, "mha", 64, 4).unwrap();
    let x = random_tensor(&mut r, &[64, 64]);
    c.bench_function("mha forward+backward T=64 D=64", |bench| {
        bench.iter(|| {
            let mut g = Graph::<f32>::new();
            let xv = g.input(x.clone());
            let out = mha.forward(&mut g, &store, xv, xv, xv, Some(60)).unwrap();
            let loss = g.sum(out.output);
            store.zero_grad();
            g.backward(loss, &mut store).unwrap();
        })
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = matmul, conv, attention
}
criterion_main!(benches);
