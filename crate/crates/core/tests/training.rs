mod common;

use ccnet_core::io;
use ccnet_core::synth::{draw_plantings, generate_split, Streams, SynthConfig, SPLIT_TRAIN};
use ccnet_core::train::loss::total_loss_detached;
use ccnet_core::train::{
    assign_targets, batches, epoch_order, focal_loss, giou_loss_1d, total_loss, AssignParams, LossWeights,
};
use ccnet_core::{Ccnet, Graph, ModelConfig, Tensor, TrainConfig, Trainer, Video};
use common::{rng, uniform};
use rand::Rng;

/// `-α(1-p)^γ ln p` for positives, `-(1-α)p^γ ln(1-p)` otherwise, with `p` clamped to `[1e-7, 1-1e-7]`.
fn focal_reference(p: f64, y: f64, gamma: f64, alpha: f64) -> f64 {
    let p = p.clamp(1e-7, 1.0 - 1e-7);
    y * (-alpha * (1.0 - p).powf(gamma) * p.ln()) + (1.0 - y) * (-(1.0 - alpha) * p.powf(gamma) * (1.0 - p).ln())
}

/// Segments `[t - d_s, t + d_e]` built explicitly, then `1 - GIoU`.
fn giou_reference(t: f64, pred: (f64, f64), target: (f64, f64)) -> f64 {
    let (a0, a1) = (t - pred.0, t + pred.1);
    let (b0, b1) = (t - target.0, t + target.1);
    let inter = (a1.min(b1) - a0.max(b0)).max(0.0);
    let union = (a1 - a0) + (b1 - b0) - inter;
    let hull = a1.max(b1) - a0.min(b0);
    1.0 - (inter / union - (hull - union) / hull)
}

#[test]
fn loss_closed_forms() {
    assert!((focal_loss(0.5, 1.0, 2.0, 0.25) - 0.04332).abs() <= 1e-5);
    assert!((focal_loss(0.5, 1.0, 2.0, 0.25) - 0.0625 * 2f64.ln()).abs() <= 1e-12);
    assert!((giou_loss_1d((3.0, 4.0), (2.0, 2.0)) - 3.0 / 7.0).abs() <= 1e-9);
    assert_eq!(giou_loss_1d((2.0, 5.0), (2.0, 5.0)), 0.0);
}

#[test]
fn focal_matches_scalar_loop() {
    let mut r = rng(1);
    let (t, c) = (13, 4);
    let p = Tensor::<f64>::from_fn(&[t, c], |_| r.random_range(0.0..1.0));
    let y = Tensor::<f64>::from_fn(&[t, c], |_| f64::from(r.random_bool(0.3)));
    let w = Tensor::<f64>::from_fn(&[t, c], |i| if i < 40 { 1.0 } else { 0.0 });
    let (gamma, alpha) = (r.random_range(0.0..3.0), r.random_range(0.0..1.0));
    let mut g = Graph::new();
    let vp = g.input(p.clone());
    let loss = g.focal_loss(vp, y.clone(), w.clone(), gamma, alpha).unwrap();
    let mut want = 0.0;
    for i in 0..t * c {
        want += w.data()[i] * focal_reference(p.data()[i], y.data()[i], gamma, alpha);
    }
    assert!((g.value(loss).data()[0] - want).abs() <= 1e-10);
}

#[test]
fn giou_matches_interval_arithmetic() {
    let mut r = rng(2);
    for _ in 0..500 {
        let t = r.random_range(0.0..50.0);
        let pred = (r.random_range(0.0..10.0), r.random_range(0.0..10.0));
        let target = (r.random_range(0.0..10.0), r.random_range(0.01..10.0));
        let got = giou_loss_1d(pred, target);
        assert!((got - giou_reference(t, pred, target)).abs() <= 1e-12, "{pred:?} {target:?}");
        assert!((0.0..=2.0).contains(&got));
    }
}

fn small_model_config() -> ModelConfig {
    ModelConfig {
        max_len: 16,
        dim: 8,
        audio_dim: 5,
        visual_dim: 6,
        classes: 3,
        levels: 3,
        heads: 2,
        self_attn_layers: 1,
        ..ModelConfig::toy()
    }
}

#[test]
fn total_loss_recomposes() {
    let cfg = small_model_config();
    let model = Ccnet::<f64>::new(cfg.clone(), 3).unwrap();
    let mut r = rng(4);
    let audio = ccnet_core::FeatureSequence::new(uniform(&mut r, &[16, 5]), 14);
    let visual = ccnet_core::FeatureSequence::new(uniform(&mut r, &[16, 6]), 14);
    let events = [
        ccnet_core::EventAnnotation::new(1.0, 6.0, 0),
        ccnet_core::EventAnnotation::new(3.0, 13.0, 2),
        ccnet_core::EventAnnotation::new(8.0, 10.0, 0),
    ];
    let targets = assign_targets(&events, &cfg, &AssignParams::for_levels(3), 14).unwrap();
    for w in [
        LossWeights::default(),
        LossWeights {
            cls: 0.7,
            reg: 0.0,
            gamma: 1.5,
            alpha: 0.6,
        },
    ] {
        let mut g = Graph::new();
        let out = model.forward(&mut g, &audio, &visual).unwrap();
        let (loss, parts) = total_loss(&mut g, &out, &targets, &w).unwrap();
        let probs: Vec<Tensor<f64>> = out.levels.iter().map(|l| g.value(l.probs).clone()).collect();
        let offsets: Vec<Tensor<f64>> = out.levels.iter().map(|l| g.value(l.offsets).clone()).collect();
        let want = total_loss_detached(&probs, &offsets, &targets, &w);
        assert!(parts.positives > 0);
        assert!((g.value(loss).data()[0] - want.total).abs() <= 1e-12);
        assert!((parts.cls - want.cls).abs() <= 1e-12);
        assert!((parts.reg - want.reg).abs() <= 1e-12);
        if w.reg == 0.0 {
            assert!((parts.total - w.cls * parts.cls).abs() <= 1e-12);
        }
    }

    let empty = assign_targets(&[], &cfg, &AssignParams::for_levels(3), 14).unwrap();
    let mut g = Graph::new();
    let out = model.forward(&mut g, &audio, &visual).unwrap();
    let (_, parts) = total_loss(&mut g, &out, &empty, &LossWeights::default()).unwrap();
    assert_eq!(parts.reg, 0.0);
    assert_eq!(parts.positives, 0);
}

fn toy_data(videos: usize, seed: u64) -> (SynthConfig, Vec<Video>) {
    let data = SynthConfig {
        videos,
        seed,
        ..SynthConfig::default()
    };
    let v = generate_split(&data, SPLIT_TRAIN).unwrap();
    (data, v)
}

#[test]
fn single_video_overfits() {
    let (_, videos) = toy_data(8, 5);
    let one: Vec<Video> = videos.into_iter().filter(|v| !v.events.is_empty()).take(1).collect();
    let cfg = ModelConfig::toy();
    let mut train = TrainConfig::full(cfg.levels);
    train.batch_size = 1;
    train.optimizer.lr = 1e-3;
    train.optimizer.warmup_steps = 10;
    let mut trainer = Trainer::new(Ccnet::<f32>::new(cfg, 6).unwrap(), train).unwrap();
    let initial = trainer.evaluate_loss(&one).unwrap().total;
    for _ in 0..200 {
        trainer.train_epoch(&one).unwrap();
    }
    let last = trainer.evaluate_loss(&one).unwrap().total;
    assert!(last < 0.1 * initial, "loss {initial} -> {last}");
}

#[test]
fn same_seed_same_loss_sequence() {
    let (_, videos) = toy_data(6, 7);
    let cfg = small_model();
    let run = || {
        let mut train = TrainConfig::full(cfg.levels);
        train.batch_size = 4;
        train.seed = 11;
        let mut t = Trainer::new(Ccnet::<f32>::new(cfg.clone(), 11).unwrap(), train).unwrap();
        (0..3).map(|_| t.train_epoch(&videos).unwrap().loss).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

fn small_model() -> ModelConfig {
    ModelConfig {
        max_len: 64,
        dim: 8,
        heads: 2,
        ..ModelConfig::toy()
    }
}

#[test]
fn oversized_batch_is_the_whole_dataset() {
    let (_, videos) = toy_data(3, 8);
    let cfg = small_model();
    let mut train = TrainConfig::full(cfg.levels);
    train.batch_size = 100;
    let mut t = Trainer::new(Ccnet::<f32>::new(cfg, 1).unwrap(), train).unwrap();
    assert_eq!(t.train_epoch(&videos).unwrap().batches, 1);
}

#[test]
fn loader_batches_have_model_shapes() {
    let (data, videos) = toy_data(64, 9);
    let dir = tempfile::tempdir().unwrap();
    io::write_dataset(dir.path(), &videos).unwrap();
    let loaded = io::read_dataset(dir.path()).unwrap();
    assert_eq!(loaded.len(), 64);
    let cfg = ModelConfig::toy();
    let bs = 16usize;
    let order = epoch_order(loaded.len(), 3, 0);
    let all = batches(&loaded, &order, bs);
    assert_eq!(all.len(), 4);
    let mut seen = Vec::new();
    for batch in &all {
        assert_eq!(batch.len(), bs);
        for v in batch {
            assert_eq!(v.audio.values.shape(), &[cfg.max_len, data.audio_dim]);
            assert_eq!(v.visual.values.shape(), &[cfg.max_len, data.visual_dim]);
            assert!(v.valid_len() <= cfg.max_len);
            let a = assign_targets(&v.events, &cfg, &AssignParams::for_levels(cfg.levels), v.valid_len()).unwrap();
            for (l, lt) in a.levels.iter().enumerate() {
                assert_eq!(lt.labels.dims2(), (cfg.level_len(l), cfg.classes));
                assert_eq!(lt.offsets.dims2(), (cfg.level_len(l), 2 * cfg.classes));
            }
            seen.push(v.id.clone());
        }
    }
    seen.sort();
    let mut ids: Vec<String> = videos.iter().map(|v| v.id.clone()).collect();
    ids.sort();
    assert_eq!(seen, ids);
    assert_eq!(batches(&loaded, &order, 60).iter().map(Vec::len).collect::<Vec<_>>(), vec![60, 4]);
}

#[test]
fn planted_event_rate_matches_configuration() {
    let cfg = SynthConfig::default();
    let mut r = rng(10);
    let mut total = 0;
    let mut distractors = 0;
    let n = 1000;
    for _ in 0..n {
        let p = draw_plantings(&cfg, cfg.max_len, &mut r);
        total += p.len();
        distractors += p.iter().filter(|p| p.streams != Streams::Both).count();
    }
    let mean = total as f64 / n as f64;
    assert!((mean - cfg.mean_events).abs() <= 0.05 * cfg.mean_events, "mean {mean}");
    let rate = distractors as f64 / total as f64;
    assert!((rate - cfg.distractor_rate).abs() <= 0.05, "distractor rate {rate}");
}
