use std::hint::black_box;

use ccnet_bench::{random_events, rng, scoring_instance, toy};
use ccnet_core::eval::evaluate;
use ccnet_core::pipeline::localize;
use ccnet_core::postprocess::{soft_nms, SoftNmsConfig};
use ccnet_core::{Ccnet, Trainer};
use criterion::{criterion_group, criterion_main, Criterion};

fn model(c: &mut Criterion) {
    let (cfg, data) = toy(8);
    let net = Ccnet::<f32>::new(cfg.model.clone(), 0).unwrap();
    c.bench_function("toy localize one video", |bench| {
        bench.iter(|| black_box(localize(&net, &data[0], &cfg.decode, &cfg.nms).unwrap()))
    });
    let mut trainer = Trainer::new(net, cfg.train.clone()).unwrap();
    c.bench_function("toy train epoch, 8 videos", |bench| {
        bench.iter(|| black_box(trainer.train_epoch(&data).unwrap()))
    });
}

fn scoring(c: &mut Criterion) {
    let mut r = rng(3);
    let events = random_events(&mut r, 200, 5, 64.0);
    let cfg = SoftNmsConfig::default();
    c.bench_function("soft-nms 200 events", |bench| bench.iter(|| black_box(soft_nms(&events, &cfg))));
    let (preds, gts) = scoring_instance(&mut r, 60, 5, 64.0);
    let eval = ccnet_core::eval::EvalConfig::default();
    c.bench_function("evaluate 60 videos", |bench| {
        bench.iter(|| black_box(evaluate(&preds, &gts, 5, &eval).unwrap()))
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = model, scoring
}
criterion_main!(benches);
