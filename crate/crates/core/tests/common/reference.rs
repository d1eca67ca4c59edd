//! Straightforward reference scorers written independently of the library.

#![allow(dead_code)]

use std::collections::HashMap;

use ccnet_core::eval::{GroundTruth, Interpolation};
use ccnet_core::postprocess::{LocalizedEvent, NmsMethod, SoftNmsConfig};
use ccnet_core::EventAnnotation;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn overlap(a: (f64, f64), b: (f64, f64)) -> f64 {
    let lo = if a.0 > b.0 { a.0 } else { b.0 };
    let hi = if a.1 < b.1 { a.1 } else { b.1 };
    let inter = if hi > lo { hi - lo } else { 0.0 };
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union > 0.0 {
        inter / union
    } else if a == b {
        1.0
    } else {
        0.0
    }
}

fn higher(a: &LocalizedEvent, b: &LocalizedEvent) -> bool {
    if a.score != b.score {
        return a.score > b.score;
    }
    if a.t_start != b.t_start {
        return a.t_start < b.t_start;
    }
    if a.class_id != b.class_id {
        return a.class_id < b.class_id;
    }
    a.t_end < b.t_end
}

fn sort_ranked(v: &mut [LocalizedEvent]) {
    for i in 1..v.len() {
        let mut j = i;
        while j > 0 && higher(&v[j], &v[j - 1]) {
            v.swap(j, j - 1);
            j -= 1;
        }
    }
}

/// Global loop: pick the best remaining event of any class, decay only its own class.
pub fn soft_nms(events: &[LocalizedEvent], cfg: &SoftNmsConfig) -> Vec<LocalizedEvent> {
    let mut alive: Vec<Option<LocalizedEvent>> = events.iter().copied().map(Some).collect();
    let mut kept = Vec::new();
    loop {
        let mut best: Option<usize> = None;
        for (i, e) in alive.iter().enumerate() {
            if let Some(e) = e {
                if best.is_none_or(|b| higher(e, alive[b].as_ref().unwrap())) {
                    best = Some(i);
                }
            }
        }
        let Some(b) = best else { break };
        let top = alive[b].take().unwrap();
        if top.score < cfg.score_floor {
            alive.retain(|e| e.is_some_and(|e| e.class_id != top.class_id));
            continue;
        }
        kept.push(top);
        for slot in alive.iter_mut() {
            if let Some(e) = slot {
                if e.class_id != top.class_id {
                    continue;
                }
                let o = overlap(top.interval(), e.interval());
                e.score = match cfg.method {
                    NmsMethod::Gaussian => e.score * (-(o * o) / cfg.sigma).exp(),
                    NmsMethod::Linear if o > cfg.iou_threshold => e.score * (1.0 - o),
                    NmsMethod::Hard if o > cfg.iou_threshold => 0.0,
                    _ => e.score,
                };
                if e.score < cfg.score_floor {
                    *slot = None;
                }
            }
        }
    }
    sort_ranked(&mut kept);
    kept.truncate(cfg.max_outputs);
    kept
}

/// Greedy non-maximum suppression per class: keep an event unless a kept one overlaps it too much.
pub fn classic_nms(events: &[LocalizedEvent], iou_threshold: f64, floor: f64, cap: usize) -> Vec<LocalizedEvent> {
    let mut sorted = events.to_vec();
    sort_ranked(&mut sorted);
    let mut kept: Vec<LocalizedEvent> = Vec::new();
    for e in sorted {
        if e.score < floor {
            continue;
        }
        if kept
            .iter()
            .all(|k| k.class_id != e.class_id || overlap(k.interval(), e.interval()) <= iou_threshold)
        {
            kept.push(e);
        }
    }
    kept.truncate(cap);
    kept
}

/// mAP per threshold over classes with ground truth.
pub fn mean_ap(
    preds: &[Vec<LocalizedEvent>],
    gts: &[GroundTruth],
    classes: usize,
    thresholds: &[f64],
    mode: Interpolation,
) -> Vec<f64> {
    thresholds
        .iter()
        .map(|&thr| {
            let mut sum = 0.0;
            let mut n = 0;
            for c in 0..classes {
                let num_gt = gts.iter().flat_map(|g| &g.events).filter(|e| e.class_id == c).count();
                if num_gt == 0 {
                    continue;
                }
                sum += class_ap(preds, gts, c, thr, num_gt, mode);
                n += 1;
            }
            sum / n as f64
        })
        .collect()
}

fn class_ap(
    preds: &[Vec<LocalizedEvent>],
    gts: &[GroundTruth],
    c: usize,
    thr: f64,
    num_gt: usize,
    mode: Interpolation,
) -> f64 {
    let mut ranked: Vec<(usize, LocalizedEvent)> = Vec::new();
    for (v, p) in preds.iter().enumerate() {
        ranked.extend(p.iter().filter(|e| e.class_id == c).map(|e| (v, *e)));
    }
    ranked.sort_by(|a, b| b.1.score.partial_cmp(&a.1.score).unwrap());
    let mut used: HashMap<(usize, usize), bool> = HashMap::new();
    let mut hits = Vec::new();
    for (v, p) in &ranked {
        let mut pick: Option<(usize, f64)> = None;
        for (j, g) in gts[*v].events.iter().enumerate() {
            if g.class_id != c || used.contains_key(&(*v, j)) {
                continue;
            }
            let o = overlap(p.interval(), (g.t_start, g.t_end));
            if o >= thr && pick.is_none_or(|(_, best)| o > best) {
                pick = Some((j, o));
            }
        }
        if let Some((j, _)) = pick {
            used.insert((*v, j), true);
        }
        hits.push(pick.is_some());
    }
    let n = hits.len();
    let mut prec = vec![0.0; n];
    let mut rec = vec![0.0; n];
    let mut tp = 0.0;
    for k in 0..n {
        if hits[k] {
            tp += 1.0;
        }
        prec[k] = tp / (k + 1) as f64;
        rec[k] = tp / num_gt as f64;
    }
    let envelope = |k: usize| prec[k..].iter().cloned().fold(0.0, f64::max);
    match mode {
        Interpolation::AllPoints => (0..n)
            .filter(|&k| hits[k])
            .map(|k| envelope(k) / num_gt as f64)
            .sum(),
        Interpolation::ElevenPoint => {
            let mut total = 0.0;
            for i in 0..=10 {
                let r = i as f64 / 10.0;
                let mut best = 0.0;
                for k in 0..n {
                    if rec[k] >= r - 1e-12 && prec[k] > best {
                        best = prec[k];
                    }
                }
                total += best;
            }
            total / 11.0
        }
    }
}

/// Per bucket: fraction of GT events hit by a same-class prediction with overlap above `thr`.
pub fn bucket_precision(
    preds: &[Vec<LocalizedEvent>],
    gts: &[GroundTruth],
    buckets: &[(f64, f64)],
    thr: f64,
) -> Vec<Option<f64>> {
    buckets
        .iter()
        .map(|&(lo, hi)| {
            let mut total = 0;
            let mut hit = 0;
            for (p, g) in preds.iter().zip(gts) {
                for e in &g.events {
                    let secs = (e.t_end - e.t_start) * g.seconds_per_timestep;
                    if !(secs > lo && secs <= hi) {
                        continue;
                    }
                    total += 1;
                    let mut found = false;
                    for q in p {
                        if q.class_id == e.class_id && overlap(q.interval(), (e.t_start, e.t_end)) > thr {
                            found = true;
                        }
                    }
                    if found {
                        hit += 1;
                    }
                }
            }
            if total == 0 {
                None
            } else {
                Some(hit as f64 / total as f64)
            }
        })
        .collect()
}

/// Random ground truth plus jittered copies and distractors as predictions.
pub fn random_instance(rng: &mut ChaCha8Rng, videos: usize) -> (Vec<Vec<LocalizedEvent>>, Vec<GroundTruth>, usize) {
    let classes = rng.random_range(1..=10);
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for v in 0..videos {
        let len = rng.random_range(20.0..120.0);
        let n_gt = rng.random_range(0..=30);
        let mut events = Vec::new();
        let mut p = Vec::new();
        for _ in 0..n_gt {
            let d = rng.random_range(0.5..len / 2.0);
            let s = rng.random_range(0.0..len - d);
            let c = rng.random_range(0..classes);
            events.push(EventAnnotation::new(s, s + d, c));
            for _ in 0..rng.random_range(0..3) {
                let js = s + rng.random_range(-0.3..0.3) * d;
                let je = s + d + rng.random_range(-0.3..0.3) * d;
                if je > js {
                    let cc = if rng.random::<f64>() < 0.1 { rng.random_range(0..classes) } else { c };
                    p.push(LocalizedEvent::new(js, je, cc, rng.random_range(0.0..1.0)));
                }
            }
        }
        for _ in 0..rng.random_range(0..=30) {
            let d = rng.random_range(0.5..len / 2.0);
            let s = rng.random_range(0.0..len - d);
            p.push(LocalizedEvent::new(s, s + d, rng.random_range(0..classes), rng.random_range(0.0..1.0)));
        }
        p.truncate(30);
        preds.push(p);
        gts.push(GroundTruth {
            video_id: format!("v{v}"),
            events,
            seconds_per_timestep: rng.random_range(0.25..2.0),
        });
    }
    if gts.iter().all(|g| g.events.is_empty()) {
        gts[0].events.push(EventAnnotation::new(1.0, 4.0, 0));
    }
    (preds, gts, classes)
}

/// Random events over a few classes with plenty of overlap.
pub fn random_events(rng: &mut ChaCha8Rng) -> Vec<LocalizedEvent> {
    let classes = rng.random_range(1..=10);
    let n = rng.random_range(0..=30);
    (0..n)
        .map(|_| {
            let s = rng.random_range(0.0..40.0);
            let d = rng.random_range(0.5..15.0);
            LocalizedEvent::new(s, s + d, rng.random_range(0..classes), rng.random_range(0.0..1.0))
        })
        .collect()
}
