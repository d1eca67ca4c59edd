//! Decoding per-timestep predictions into scored intervals and Soft-NMS.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use crate::eval::tiou;
use crate::model::TimestepPrediction;

/// A decoded event in full-resolution timestep units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalizedEvent {
    pub t_start: f64,
    pub t_end: f64,
    pub class_id: usize,
    pub score: f64,
}

impl LocalizedEvent {
    pub fn new(t_start: f64, t_end: f64, class_id: usize, score: f64) -> Self {
        Self {
            t_start,
            t_end,
            class_id,
            score,
        }
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.t_start, self.t_end)
    }
}

/// Descending score, then earlier start, then lower class, then earlier end.
pub fn rank_order(a: &LocalizedEvent, b: &LocalizedEvent) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.t_start.total_cmp(&b.t_start))
        .then(a.class_id.cmp(&b.class_id))
        .then(a.t_end.total_cmp(&b.t_end))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassMode {
    /// Every class at or above the threshold yields an event.
    MultiLabel,
    /// Only the most probable class per timestep.
    Argmax,
}

impl fmt::Display for ClassMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassMode::MultiLabel => "multi_label",
            ClassMode::Argmax => "argmax",
        })
    }
}

impl FromStr for ClassMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "multi_label" => Ok(ClassMode::MultiLabel),
            "argmax" => Ok(ClassMode::Argmax),
            other => Err(format!("unknown class mode `{other}`, expected multi_label or argmax")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeConfig {
    pub score_threshold: f64,
    /// Events kept per video before suppression.
    pub pre_nms_topk: usize,
    pub class_mode: ClassMode,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            score_threshold: 0.01,
            pre_nms_topk: 2000,
            class_mode: ClassMode::MultiLabel,
        }
    }
}

/// `t_s = (t - d_s)·stride`, `t_e = (t + d_e)·stride`, clipped to `[0, valid_len]`.
pub fn decode_predictions(
    preds: &[TimestepPrediction],
    valid_len: usize,
    cfg: &DecodeConfig,
) -> Vec<LocalizedEvent> {
    let limit = valid_len as f64;
    let mut events = Vec::new();
    for level in preds {
        let s = level.stride as f64;
        let n = level.len().min(level.valid);
        for t in 0..n {
            let classes: Vec<usize> = match cfg.class_mode {
                ClassMode::MultiLabel => (0..level.classes()).collect(),
                ClassMode::Argmax => {
                    let best = (0..level.classes())
                        .max_by(|&a, &b| level.prob(t, a).total_cmp(&level.prob(t, b)).then(b.cmp(&a)));
                    best.into_iter().collect()
                }
            };
            for class in classes {
                let p = level.prob(t, class);
                if !(p >= cfg.score_threshold) || p <= 0.0 {
                    continue;
                }
                let (ds, de) = level.distances(t, class);
                let pos = t as f64 * s;
                let start = (pos - ds * s).clamp(0.0, limit);
                let end = (pos + de * s).clamp(0.0, limit);
                if end > start {
                    events.push(LocalizedEvent::new(start, end, class, p.min(1.0)));
                }
            }
        }
    }
    events.sort_by(rank_order);
    events.truncate(cfg.pre_nms_topk);
    events
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NmsMethod {
    Gaussian,
    Linear,
    Hard,
}

impl fmt::Display for NmsMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NmsMethod::Gaussian => "gaussian",
            NmsMethod::Linear => "linear",
            NmsMethod::Hard => "hard",
        })
    }
}

impl FromStr for NmsMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "gaussian" => Ok(NmsMethod::Gaussian),
            "linear" => Ok(NmsMethod::Linear),
            "hard" => Ok(NmsMethod::Hard),
            other => Err(format!("unknown NMS method `{other}`, expected gaussian, linear or hard")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SoftNmsConfig {
    pub method: NmsMethod,
    pub sigma: f64,
    pub iou_threshold: f64,
    pub score_floor: f64,
    pub max_outputs: usize,
}

impl Default for SoftNmsConfig {
    fn default() -> Self {
        Self {
            method: NmsMethod::Gaussian,
            sigma: 0.9,
            iou_threshold: 0.5,
            score_floor: 0.001,
            max_outputs: 200,
        }
    }
}

impl SoftNmsConfig {
    fn decay(&self, score: f64, overlap: f64) -> f64 {
        match self.method {
            NmsMethod::Gaussian => score * (-(overlap * overlap) / self.sigma).exp(),
            NmsMethod::Linear if overlap > self.iou_threshold => score * (1.0 - overlap),
            NmsMethod::Hard if overlap > self.iou_threshold => 0.0,
            _ => score,
        }
    }
}

/// Per-class Soft-NMS. Survivors are returned in [`rank_order`], capped at `max_outputs`.
pub fn soft_nms(events: &[LocalizedEvent], cfg: &SoftNmsConfig) -> Vec<LocalizedEvent> {
    let mut classes: Vec<usize> = events.iter().map(|e| e.class_id).collect();
    classes.sort_unstable();
    classes.dedup();

    let mut kept = Vec::new();
    for class in classes {
        let mut pool: Vec<LocalizedEvent> =
            events.iter().filter(|e| e.class_id == class).copied().collect();
        while !pool.is_empty() {
            let best = (0..pool.len())
                .min_by(|&a, &b| rank_order(&pool[a], &pool[b]))
                .expect("pool is non-empty");
            let top = pool.swap_remove(best);
            if top.score < cfg.score_floor {
                break;
            }
            kept.push(top);
            for e in pool.iter_mut() {
                e.score = cfg.decay(e.score, tiou(top.interval(), e.interval()));
            }
            pool.retain(|e| e.score >= cfg.score_floor);
        }
    }
    kept.sort_by(rank_order);
    kept.truncate(cfg.max_outputs);
    kept
}
