//! tIoU matching, average precision, mAP and duration-bucket precision.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use crate::error::{Error, Result};
use crate::postprocess::LocalizedEvent;
use crate::types::EventAnnotation;

/// Thresholds for the headline mAP columns.
pub const REPORT_THRESHOLDS: [f64; 5] = [0.5, 0.6, 0.7, 0.8, 0.9];
/// Thresholds averaged into `map_avg`.
pub const AVERAGE_THRESHOLDS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
/// Duration buckets in seconds, lower edge exclusive.
pub const DURATION_BUCKETS: [(f64, f64); 3] = [(0.0, 5.0), (5.0, 20.0), (20.0, 60.0)];
pub const BUCKET_NAMES: [&str; 3] = ["bucket_short", "bucket_mid", "bucket_long"];

/// Temporal IoU. Zero-length intervals overlap only when identical.
pub fn tiou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union <= 0.0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Interpolation {
    /// Area under the monotone precision envelope.
    #[default]
    AllPoints,
    /// Mean envelope precision at recall 0, 0.1, ..., 1.
    ElevenPoint,
}

impl fmt::Display for Interpolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Interpolation::AllPoints => "all_points",
            Interpolation::ElevenPoint => "eleven_point",
        })
    }
}

impl std::str::FromStr for Interpolation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "all_points" => Ok(Interpolation::AllPoints),
            "eleven_point" => Ok(Interpolation::ElevenPoint),
            other => Err(format!(
                "unknown interpolation `{other}`, expected all_points or eleven_point"
            )),
        }
    }
}

/// A scored interval for one class, as consumed by the scorer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scored {
    pub t_start: f64,
    pub t_end: f64,
    pub score: f64,
}

/// True/false positive flags for predictions in ranked order.
pub fn match_predictions(preds: &[Scored], gts: &[(f64, f64)], threshold: f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds[b]
            .score
            .total_cmp(&preds[a].score)
            .then(preds[a].t_start.total_cmp(&preds[b].t_start))
            .then(a.cmp(&b))
    });
    let mut taken = vec![false; gts.len()];
    order
        .iter()
        .map(|&i| {
            let p = (preds[i].t_start, preds[i].t_end);
            let mut best: Option<(usize, f64)> = None;
            for (j, &gt) in gts.iter().enumerate() {
                if taken[j] {
                    continue;
                }
                let o = tiou(p, gt);
                if o >= threshold && best.is_none_or(|(_, b)| o > b) {
                    best = Some((j, o));
                }
            }
            match best {
                Some((j, _)) => {
                    taken[j] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// AP of one class at one threshold; `None` when there is no ground truth.
pub fn average_precision(
    preds: &[Scored],
    gts: &[(f64, f64)],
    threshold: f64,
    mode: Interpolation,
) -> Option<f64> {
    if gts.is_empty() {
        return None;
    }
    let hits = match_predictions(preds, gts, threshold);
    Some(ap_from_hits(&hits, gts.len(), mode))
}

/// AP from ranked true/false positive flags against `num_gt` ground truths.
pub fn ap_from_hits(hits: &[bool], num_gt: usize, mode: Interpolation) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut recall = Vec::with_capacity(hits.len());
    let mut precision = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (k, &hit) in hits.iter().enumerate() {
        tp += usize::from(hit);
        recall.push(tp as f64 / num_gt as f64);
        precision.push(tp as f64 / (k + 1) as f64);
    }
    // Envelope: best precision at any rank at or after this one.
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let ap = match mode {
        Interpolation::AllPoints => {
            let mut prev = 0.0;
            let mut area = 0.0;
            for (r, p) in recall.iter().zip(&precision) {
                area += (r - prev) * p;
                prev = *r;
            }
            area
        }
        Interpolation::ElevenPoint => {
            (0..=10)
                .map(|i| {
                    let level = i as f64 / 10.0;
                    recall
                        .iter()
                        .position(|&r| r >= level - 1e-12)
                        .map_or(0.0, |k| precision[k])
                })
                .sum::<f64>()
                / 11.0
        }
    };
    ap.clamp(0.0, 1.0)
}

/// Ground truth of one video in timestep units.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub video_id: String,
    pub events: Vec<EventAnnotation>,
    pub seconds_per_timestep: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub interpolation: Interpolation,
    /// tIoU a prediction must exceed to localize a GT for bucket precision.
    pub bucket_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            interpolation: Interpolation::AllPoints,
            bucket_threshold: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// `(threshold, mAP)` for the nine averaged thresholds.
    pub map_at: Vec<(f64, f64)>,
    pub map_avg: f64,
    /// `ap[c][k]` at `AVERAGE_THRESHOLDS[k]`; `None` for classes without ground truth.
    pub per_class: Vec<Option<Vec<f64>>>,
    pub buckets: [Option<f64>; 3],
    pub bucket_counts: [usize; 3],
    pub num_gt: usize,
    pub num_pred: usize,
}

impl EvalReport {
    /// mAP at `threshold`, if it is one of the averaged thresholds.
    pub fn map(&self, threshold: f64) -> Option<f64> {
        self.map_at
            .iter()
            .find(|(t, _)| (t - threshold).abs() < 1e-9)
            .map(|&(_, m)| m)
    }

    /// Machine-readable `key=value` lines.
    pub fn key_values(&self) -> String {
        let mut out = String::new();
        for t in REPORT_THRESHOLDS {
            let _ = writeln!(out, "map@{t:.1}={:.6}", self.map(t).unwrap_or(0.0));
        }
        let _ = writeln!(out, "map_avg={:.6}", self.map_avg);
        for (name, b) in BUCKET_NAMES.iter().zip(&self.buckets) {
            match b {
                Some(v) => {
                    let _ = writeln!(out, "{name}={v:.6}");
                }
                None => {
                    let _ = writeln!(out, "{name}=n/a");
                }
            }
        }
        out
    }

    /// Aligned table for terminals.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<8}", "class");
        for t in REPORT_THRESHOLDS {
            let _ = write!(out, "{:>8}", format!("@{t:.1}"));
        }
        let _ = writeln!(out, "{:>8}", "avg");
        for (c, row) in self.per_class.iter().enumerate() {
            let _ = write!(out, "{c:<8}");
            match row {
                Some(ap) => {
                    for t in REPORT_THRESHOLDS {
                        let k = threshold_index(t);
                        let _ = write!(out, "{:>8.4}", ap[k]);
                    }
                    let avg = ap.iter().sum::<f64>() / ap.len() as f64;
                    let _ = writeln!(out, "{avg:>8.4}");
                }
                None => {
                    let _ = writeln!(out, "{:>8}", "no gt");
                }
            }
        }
        let _ = write!(out, "{:<8}", "mAP");
        for t in REPORT_THRESHOLDS {
            let _ = write!(out, "{:>8.4}", self.map(t).unwrap_or(0.0));
        }
        let _ = writeln!(out, "{:>8.4}", self.map_avg);
        let _ = writeln!(out);
        for ((name, b), n) in BUCKET_NAMES.iter().zip(&self.buckets).zip(&self.bucket_counts) {
            let value = b.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
            let _ = writeln!(out, "{name:<14}{value:>8}  ({n} events)");
        }
        out
    }
}

fn threshold_index(t: f64) -> usize {
    AVERAGE_THRESHOLDS
        .iter()
        .position(|x| (x - t).abs() < 1e-9)
        .expect("report thresholds are a subset of the averaged thresholds")
}

/// Fraction of GT events per duration bucket localized by a same-class
/// prediction with tIoU above `threshold`. Empty buckets are `None`.
pub fn duration_bucket_precision(
    preds: &[Vec<LocalizedEvent>],
    gts: &[GroundTruth],
    buckets: &[(f64, f64)],
    threshold: f64,
) -> (Vec<Option<f64>>, Vec<usize>) {
    let mut correct = vec![0usize; buckets.len()];
    let mut total = vec![0usize; buckets.len()];
    for (video, gt) in preds.iter().zip(gts) {
        for e in &gt.events {
            let secs = e.duration() * gt.seconds_per_timestep;
            let Some(b) = buckets.iter().position(|&(lo, hi)| secs > lo && secs <= hi) else {
                continue;
            };
            total[b] += 1;
            let interval = (e.t_start, e.t_end);
            if video
                .iter()
                .any(|p| p.class_id == e.class_id && tiou(p.interval(), interval) > threshold)
            {
                correct[b] += 1;
            }
        }
    }
    let values = correct
        .iter()
        .zip(&total)
        .map(|(&c, &n)| (n > 0).then(|| c as f64 / n as f64))
        .collect();
    (values, total)
}

/// Scores predictions against ground truth over all videos.
///
/// `preds[i]` belongs to `gts[i]`. Per threshold, mAP is the mean AP over
/// classes that have ground truth; `map_avg` averages over the nine thresholds.
pub fn evaluate(
    preds: &[Vec<LocalizedEvent>],
    gts: &[GroundTruth],
    classes: usize,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    if preds.len() != gts.len() {
        return Err(Error::Contract(format!(
            "{} prediction lists for {} videos",
            preds.len(),
            gts.len()
        )));
    }
    let num_gt: usize = gts.iter().map(|g| g.events.len()).sum();
    if num_gt == 0 {
        return Err(Error::EmptyEvaluation("ground truth has no events".into()));
    }
    if let Some(e) = gts.iter().flat_map(|g| &g.events).find(|e| e.class_id >= classes) {
        return Err(Error::Contract(format!(
            "ground-truth class {} outside 0..{classes}",
            e.class_id
        )));
    }

    // Matching is per video, so track video identity inside each class pool.
    let mut pred_pool: BTreeMap<usize, Vec<(usize, Scored)>> = BTreeMap::new();
    let mut gt_pool: BTreeMap<usize, Vec<(usize, (f64, f64))>> = BTreeMap::new();
    for (v, video) in preds.iter().enumerate() {
        for p in video.iter().filter(|p| p.class_id < classes) {
            pred_pool.entry(p.class_id).or_default().push((
                v,
                Scored {
                    t_start: p.t_start,
                    t_end: p.t_end,
                    score: p.score,
                },
            ));
        }
    }
    for (v, gt) in gts.iter().enumerate() {
        for e in &gt.events {
            gt_pool
                .entry(e.class_id)
                .or_default()
                .push((v, (e.t_start, e.t_end)));
        }
    }

    let per_class: Vec<Option<Vec<f64>>> = (0..classes)
        .map(|c| {
            let g = gt_pool.get(&c)?;
            let empty = Vec::new();
            let p = pred_pool.get(&c).unwrap_or(&empty);
            Some(
                AVERAGE_THRESHOLDS
                    .iter()
                    .map(|&t| class_ap(p, g, t, cfg.interpolation))
                    .collect(),
            )
        })
        .collect();

    let scored: Vec<&Vec<f64>> = per_class.iter().flatten().collect();
    let map_at: Vec<(f64, f64)> = AVERAGE_THRESHOLDS
        .iter()
        .enumerate()
        .map(|(k, &t)| (t, scored.iter().map(|ap| ap[k]).sum::<f64>() / scored.len() as f64))
        .collect();
    let map_avg = map_at.iter().map(|&(_, m)| m).sum::<f64>() / map_at.len() as f64;

    let (b, counts) = duration_bucket_precision(preds, gts, &DURATION_BUCKETS, cfg.bucket_threshold);
    Ok(EvalReport {
        map_at,
        map_avg,
        per_class,
        buckets: [b[0], b[1], b[2]],
        bucket_counts: [counts[0], counts[1], counts[2]],
        num_gt,
        num_pred: preds.iter().map(Vec::len).sum(),
    })
}

/// AP across videos: predictions only match ground truth of their own video.
fn class_ap(
    preds: &[(usize, Scored)],
    gts: &[(usize, (f64, f64))],
    threshold: f64,
    mode: Interpolation,
) -> f64 {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (&preds[a].1, &preds[b].1);
        pb.score
            .total_cmp(&pa.score)
            .then(pa.t_start.total_cmp(&pb.t_start))
            .then(preds[a].0.cmp(&preds[b].0))
            .then(a.cmp(&b))
    });
    let mut taken = vec![false; gts.len()];
    let hits: Vec<bool> = order
        .iter()
        .map(|&i| {
            let (v, p) = preds[i];
            let mut best: Option<(usize, f64)> = None;
            for (j, &(gv, gt)) in gts.iter().enumerate() {
                if gv != v || taken[j] {
                    continue;
                }
                let o = tiou((p.t_start, p.t_end), gt);
                if o >= threshold && best.is_none_or(|(_, b)| o > b) {
                    best = Some((j, o));
                }
            }
            best.map(|(j, _)| taken[j] = true).is_some()
        })
        .collect();
    ap_from_hits(&hits, gts.len(), mode)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(a: f64, b: f64, score: f64) -> Scored {
        Scored {
            t_start: a,
            t_end: b,
            score,
        }
    }

    #[test]
    fn tiou_examples() {
        assert!((tiou((0.0, 10.0), (5.0, 15.0)) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(tiou((3.0, 9.0), (3.0, 9.0)), 1.0);
        assert_eq!(tiou((0.0, 1.0), (2.0, 3.0)), 0.0);
        assert_eq!(tiou((2.0, 2.0), (2.0, 2.0)), 1.0);
        assert_eq!(tiou((2.0, 2.0), (0.0, 5.0)), 0.0);
    }

    #[test]
    fn ap_perfect_single() {
        let ap = average_precision(&[s(0.0, 10.0, 0.9)], &[(0.0, 10.0)], 0.5, Interpolation::AllPoints);
        assert_eq!(ap, Some(1.0));
    }

    #[test]
    fn ap_duplicate_after_hit() {
        let preds = [s(0.0, 10.0, 0.9), s(0.0, 10.0, 0.5)];
        let ap = average_precision(&preds, &[(0.0, 10.0)], 0.5, Interpolation::AllPoints);
        assert_eq!(ap, Some(1.0));
    }

    #[test]
    fn ap_false_positive_first() {
        let preds = [s(20.0, 30.0, 0.9), s(0.0, 10.0, 0.5)];
        let ap = average_precision(&preds, &[(0.0, 10.0)], 0.5, Interpolation::AllPoints);
        assert_eq!(ap, Some(0.5));
    }

    #[test]
    fn ap_without_gt_is_undefined() {
        assert_eq!(average_precision(&[s(0.0, 1.0, 0.5)], &[], 0.5, Interpolation::AllPoints), None);
    }

    #[test]
    fn eleven_point_half_recall() {
        let preds = [s(0.0, 10.0, 0.9)];
        let ap = average_precision(&preds, &[(0.0, 10.0), (20.0, 30.0)], 0.5, Interpolation::ElevenPoint)
            .unwrap();
        assert!((ap - 6.0 / 11.0).abs() < 1e-12);
    }

    fn gt(events: &[(f64, f64, usize)]) -> GroundTruth {
        GroundTruth {
            video_id: "v".into(),
            events: events.iter().map(|&(a, b, c)| EventAnnotation::new(a, b, c)).collect(),
            seconds_per_timestep: 1.0,
        }
    }

    #[test]
    fn perfect_and_vacuous() {
        let gts = vec![gt(&[(0.0, 4.0, 0), (10.0, 30.0, 1)]), gt(&[(5.0, 40.0, 1)])];
        let perfect: Vec<Vec<LocalizedEvent>> = gts
            .iter()
            .map(|g| {
                g.events
                    .iter()
                    .map(|e| LocalizedEvent::new(e.t_start, e.t_end, e.class_id, 1.0))
                    .collect()
            })
            .collect();
        let r = evaluate(&perfect, &gts, 3, &EvalConfig::default()).unwrap();
        assert!(r.map_at.iter().all(|&(_, m)| m == 1.0));
        assert_eq!(r.map_avg, 1.0);
        assert_eq!(r.per_class[2], None);
        assert_eq!(r.buckets, [Some(1.0), Some(1.0), Some(1.0)]);

        let r = evaluate(&[vec![], vec![]], &gts, 3, &EvalConfig::default()).unwrap();
        assert!(r.map_at.iter().all(|&(_, m)| m == 0.0));
        assert_eq!(r.buckets, [Some(0.0), Some(0.0), Some(0.0)]);
    }

    #[test]
    fn no_cross_video_matching() {
        let gts = vec![gt(&[(0.0, 10.0, 0)]), gt(&[])];
        let preds = vec![vec![], vec![LocalizedEvent::new(0.0, 10.0, 0, 1.0)]];
        let r = evaluate(&preds, &gts, 1, &EvalConfig::default()).unwrap();
        assert_eq!(r.map_avg, 0.0);
    }

    #[test]
    fn empty_ground_truth_errors() {
        assert!(matches!(
            evaluate(&[vec![]], &[gt(&[])], 2, &EvalConfig::default()),
            Err(Error::EmptyEvaluation(_))
        ));
    }

    #[test]
    fn empty_bucket_not_applicable() {
        let gts = vec![gt(&[(0.0, 3.0, 0)])];
        let (b, n) = duration_bucket_precision(&[vec![]], &gts, &DURATION_BUCKETS, 0.5);
        assert_eq!(b, vec![Some(0.0), None, None]);
        assert_eq!(n, vec![1, 0, 0]);
    }

    #[test]
    fn key_values_block() {
        let gts = vec![gt(&[(0.0, 3.0, 0)])];
        let preds = vec![vec![LocalizedEvent::new(0.0, 3.0, 0, 1.0)]];
        let kv = evaluate(&preds, &gts, 1, &EvalConfig::default()).unwrap().key_values();
        assert!(kv.contains("map@0.5=1.000000\n"));
        assert!(kv.contains("map_avg=1.000000\n"));
        assert!(kv.contains("bucket_mid=n/a\n"));
    }
}
