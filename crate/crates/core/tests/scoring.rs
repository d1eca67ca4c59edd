mod common;

use std::time::Instant;

use ccnet_core::eval::{
    duration_bucket_precision, evaluate, EvalConfig, Interpolation, AVERAGE_THRESHOLDS, DURATION_BUCKETS,
};
use ccnet_core::model::TimestepPrediction;
use ccnet_core::postprocess::{decode_predictions, soft_nms, DecodeConfig, LocalizedEvent, NmsMethod, SoftNmsConfig};
use ccnet_core::train::{assign_targets, AssignParams};
use ccnet_core::{EventAnnotation, ModelConfig, Tensor};
use common::reference;
use common::rng;
use proptest::prelude::*;
use rand::Rng;

const TOL: f64 = 1e-9;
const INSTANCES: u64 = 100;

fn same_events(a: &[LocalizedEvent], b: &[LocalizedEvent]) -> Result<(), String> {
    if a.len() != b.len() {
        return Err(format!("{} events vs {}", a.len(), b.len()));
    }
    for (x, y) in a.iter().zip(b) {
        if x.class_id != y.class_id || x.t_start != y.t_start || x.t_end != y.t_end || (x.score - y.score).abs() > TOL {
            return Err(format!("{x:?} vs {y:?}"));
        }
    }
    Ok(())
}

#[test]
fn soft_nms_matches_reference() {
    let start = Instant::now();
    for seed in 0..INSTANCES {
        let mut r = rng(seed);
        let events = reference::random_events(&mut r);
        for method in [NmsMethod::Gaussian, NmsMethod::Linear, NmsMethod::Hard] {
            let cfg = SoftNmsConfig {
                method,
                sigma: r.random_range(0.2..1.5),
                iou_threshold: r.random_range(0.2..0.8),
                score_floor: r.random_range(0.0..0.2),
                max_outputs: r.random_range(1..40),
            };
            let got = soft_nms(&events, &cfg);
            if let Err(e) = same_events(&got, &reference::soft_nms(&events, &cfg)) {
                panic!("seed {seed} {method:?}: {e}");
            }
        }
    }
    assert!(start.elapsed().as_secs() < 60);
}

#[test]
fn hard_mode_is_classic_nms() {
    for seed in 0..INSTANCES {
        let mut r = rng(1000 + seed);
        let events = reference::random_events(&mut r);
        let cfg = SoftNmsConfig {
            method: NmsMethod::Hard,
            iou_threshold: r.random_range(0.1..0.9),
            score_floor: 1e-9,
            max_outputs: 200,
            ..SoftNmsConfig::default()
        };
        let got = soft_nms(&events, &cfg);
        let want = reference::classic_nms(&events, cfg.iou_threshold, cfg.score_floor, cfg.max_outputs);
        same_events(&got, &want).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
    }
}

#[test]
fn map_matches_reference() {
    let start = Instant::now();
    let mut informative = 0;
    for seed in 0..INSTANCES {
        let mut r = rng(2000 + seed);
        let videos = r.random_range(1..=4);
        let (preds, gts, classes) = reference::random_instance(&mut r, videos);
        for mode in [Interpolation::AllPoints, Interpolation::ElevenPoint] {
            let cfg = EvalConfig {
                interpolation: mode,
                ..EvalConfig::default()
            };
            let report = evaluate(&preds, &gts, classes, &cfg).unwrap();
            let want = reference::mean_ap(&preds, &gts, classes, &AVERAGE_THRESHOLDS, mode);
            for ((t, got), w) in report.map_at.iter().zip(&want) {
                assert!((got - w).abs() <= TOL, "seed {seed} {mode:?} @{t}: {got} vs {w}");
            }
            let avg = want.iter().sum::<f64>() / want.len() as f64;
            assert!((report.map_avg - avg).abs() <= TOL, "seed {seed}: avg {} vs {avg}", report.map_avg);
            informative += usize::from(avg > 0.05 && avg < 0.95);
        }
    }
    assert!(informative >= 100, "only {informative} runs had non-trivial mAP");
    assert!(start.elapsed().as_secs() < 60);
}

#[test]
fn buckets_match_brute_force() {
    for seed in 0..INSTANCES {
        let mut r = rng(3000 + seed);
        let (preds, gts, _) = reference::random_instance(&mut r, 3);
        let thr = r.random_range(0.1..0.9);
        let (got, _) = duration_bucket_precision(&preds, &gts, &DURATION_BUCKETS, thr);
        let want = reference::bucket_precision(&preds, &gts, &DURATION_BUCKETS, thr);
        assert_eq!(got, want, "seed {seed}");
    }
}

#[test]
fn ground_truth_as_predictions_scores_one() {
    let mut r = rng(7);
    let (_, gts, classes) = reference::random_instance(&mut r, 3);
    let preds: Vec<Vec<LocalizedEvent>> = gts
        .iter()
        .map(|g| {
            g.events
                .iter()
                .enumerate()
                .map(|(i, e)| LocalizedEvent::new(e.t_start, e.t_end, e.class_id, 1.0 - i as f64 * 1e-3))
                .collect()
        })
        .collect();
    let report = evaluate(&preds, &gts, classes, &EvalConfig::default()).unwrap();
    for (t, m) in &report.map_at {
        assert_eq!(*m, 1.0, "@{t}");
    }
}

/// Targets written as perfect predictions, one level per pyramid stage.
fn targets_as_predictions(events: &[EventAnnotation], cfg: &ModelConfig, valid: usize) -> Vec<TimestepPrediction> {
    let params = AssignParams::for_levels(cfg.levels);
    let a = assign_targets(events, cfg, &params, valid).unwrap();
    let c = cfg.classes;
    a.levels
        .iter()
        .enumerate()
        .map(|(level, l)| {
            let n = l.labels.dims2().0;
            let mut offsets = Tensor::zeros(&[2, c, n]);
            for t in 0..n {
                for k in 0..c {
                    offsets.data_mut()[k * n + t] = l.offsets.at(t, k);
                    offsets.data_mut()[c * n + k * n + t] = l.offsets.at(t, c + k);
                }
            }
            TimestepPrediction {
                level,
                stride: l.stride,
                valid: l.valid,
                probs: l.labels.clone(),
                offsets,
            }
        })
        .collect()
}

fn integer_events(r: &mut rand_chacha::ChaCha8Rng, len: usize, classes: usize) -> Vec<EventAnnotation> {
    let mut events: Vec<EventAnnotation> = Vec::new();
    for _ in 0..r.random_range(1..=6) {
        let d = r.random_range(1..=len / 2);
        let s = r.random_range(0..=len - d);
        let c = r.random_range(0..classes);
        let e = EventAnnotation::new(s as f64, (s + d) as f64, c);
        if events.iter().all(|o| o.class_id != c || o.t_end <= e.t_start || e.t_end <= o.t_start) {
            events.push(e);
        }
    }
    events
}

#[test]
fn targets_decode_to_ground_truth() {
    let cfg = ModelConfig {
        max_len: 64,
        levels: 4,
        classes: 4,
        ..ModelConfig::toy()
    };
    let decode = DecodeConfig {
        score_threshold: 0.5,
        pre_nms_topk: usize::MAX,
        ..DecodeConfig::default()
    };
    let hard = SoftNmsConfig {
        method: NmsMethod::Hard,
        iou_threshold: 0.999,
        max_outputs: usize::MAX,
        ..SoftNmsConfig::default()
    };
    let mut covered = 0;
    let mut total = 0;
    for seed in 0..200 {
        let mut r = rng(4000 + seed);
        let valid = r.random_range(8..=64);
        let events = integer_events(&mut r, valid, cfg.classes);
        let preds = targets_as_predictions(&events, &cfg, valid);
        let decoded = decode_predictions(&preds, valid, &decode);
        for d in &decoded {
            assert!(
                events
                    .iter()
                    .any(|e| e.class_id == d.class_id && e.t_start == d.t_start && e.t_end == d.t_end),
                "seed {seed}: {d:?} is not a ground-truth interval"
            );
        }
        let kept = soft_nms(&decoded, &hard);
        for e in &events {
            let n = kept
                .iter()
                .filter(|d| e.class_id == d.class_id && e.t_start == d.t_start && e.t_end == d.t_end)
                .count();
            assert!(n <= 1, "seed {seed}: {e:?} kept {n} times");
            covered += n;
            total += 1;
        }
        assert_eq!(kept.len(), covered_in(&kept, &events), "seed {seed}: stray events survived");
    }
    assert_eq!(covered, total, "every ground-truth event is recovered");
}

fn covered_in(kept: &[LocalizedEvent], events: &[EventAnnotation]) -> usize {
    kept.iter()
        .filter(|d| events.iter().any(|e| e.class_id == d.class_id && e.t_start == d.t_start && e.t_end == d.t_end))
        .count()
}

fn arb_instance() -> impl Strategy<Value = u64> {
    0u64..10_000
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ap_invariant_under_monotone_scores(seed in arb_instance()) {
        let mut r = rng(seed);
        let (preds, gts, classes) = reference::random_instance(&mut r, 2);
        let warped: Vec<Vec<LocalizedEvent>> = preds
            .iter()
            .map(|p| p.iter().map(|e| LocalizedEvent { score: (3.0 * e.score).exp() + 0.5, ..*e }).collect())
            .collect();
        let cfg = EvalConfig::default();
        let a = evaluate(&preds, &gts, classes, &cfg).unwrap();
        let b = evaluate(&warped, &gts, classes, &cfg).unwrap();
        prop_assert_eq!(a.map_at, b.map_at);
    }

    #[test]
    fn map_is_monotone_in_threshold(seed in arb_instance()) {
        let mut r = rng(seed);
        let (preds, gts, classes) = reference::random_instance(&mut r, 3);
        let report = evaluate(&preds, &gts, classes, &EvalConfig::default()).unwrap();
        for w in report.map_at.windows(2) {
            prop_assert!(w[1].1 <= w[0].1 + 1e-12, "{:?}", report.map_at);
        }
    }

    #[test]
    fn soft_nms_never_raises_scores(seed in arb_instance()) {
        let mut r = rng(seed);
        let events = reference::random_events(&mut r);
        for method in [NmsMethod::Gaussian, NmsMethod::Linear, NmsMethod::Hard] {
            let cfg = SoftNmsConfig { method, ..SoftNmsConfig::default() };
            for k in soft_nms(&events, &cfg) {
                let src = events
                    .iter()
                    .find(|e| e.class_id == k.class_id && e.t_start == k.t_start && e.t_end == k.t_end);
                prop_assert!(src.is_some_and(|e| k.score <= e.score));
            }
        }
    }

    #[test]
    fn evaluation_ignores_video_ids(seed in arb_instance()) {
        let mut r = rng(seed);
        let (preds, mut gts, classes) = reference::random_instance(&mut r, 2);
        let a = evaluate(&preds, &gts, classes, &EvalConfig::default()).unwrap();
        for g in gts.iter_mut() {
            g.video_id = format!("renamed-{}", g.video_id);
        }
        let b = evaluate(&preds, &gts, classes, &EvalConfig::default()).unwrap();
        prop_assert_eq!(a, b);
    }
}
