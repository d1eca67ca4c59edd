//! Assignment of ground-truth events to pyramid timesteps.

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tensor::Tensor;
use crate::types::EventAnnotation;

/// Default regression ranges `(lo, hi]` in full-resolution timesteps:
/// `(0,4], (4,8], (8,16], …` with the coarsest level open-ended.
pub fn default_ranges(levels: usize) -> Vec<(f64, f64)> {
    (0..levels)
        .map(|l| {
            let lo = if l == 0 { 0.0 } else { 4.0 * (1u64 << (l - 1)) as f64 };
            let hi = if l + 1 == levels {
                f64::INFINITY
            } else {
                4.0 * (1u64 << l) as f64
            };
            (lo, hi)
        })
        .collect()
}

/// Targets for one pyramid level.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelTargets {
    pub stride: usize,
    pub valid: usize,
    /// `[T_l × C]` binary class labels.
    pub labels: Tensor<f64>,
    /// `[T_l × 2C]` onset/offset distances in stride units; zero outside the mask.
    pub offsets: Tensor<f64>,
    /// `[T_l × C]` regression indicator.
    pub mask: Tensor<f64>,
    /// `[T_l × C]` classification weight: 1 on valid timesteps, 0 on padding.
    pub weight: Tensor<f64>,
}

impl LevelTargets {
    pub fn positives(&self) -> usize {
        self.mask.data().iter().filter(|&&m| m > 0.0).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetAssignment {
    pub levels: Vec<LevelTargets>,
}

impl TargetAssignment {
    pub fn positives(&self) -> usize {
        self.levels.iter().map(LevelTargets::positives).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssignParams {
    pub ranges: Vec<(f64, f64)>,
    /// When set, only timesteps within `radius · stride` of the event centre are positive.
    pub center_radius: Option<f64>,
}

impl AssignParams {
    pub fn for_levels(levels: usize) -> Self {
        Self {
            ranges: default_ranges(levels),
            center_radius: None,
        }
    }
}

pub fn validate_events(events: &[EventAnnotation], max_len: usize, classes: usize) -> Result<()> {
    for (index, e) in events.iter().enumerate() {
        let bad = !(e.t_start >= 0.0 && e.t_end <= max_len as f64 && e.t_end > e.t_start)
            || e.class_id >= classes;
        if bad {
            return Err(Error::AnnotationOutOfRange {
                index,
                start: e.t_start,
                end: e.t_end,
                limit: max_len,
            });
        }
    }
    Ok(())
}

/// Marks timestep `t` at level `l` positive for class `c` when the position
/// `t · stride` lies in `[t_start, t_end)` of a class-`c` event and the larger
/// boundary distance falls in that level's range. Same-class overlaps resolve
/// to the event whose centre is nearer.
pub fn assign_targets(
    events: &[EventAnnotation],
    cfg: &ModelConfig,
    params: &AssignParams,
    valid_len: usize,
) -> Result<TargetAssignment> {
    validate_events(events, cfg.max_len, cfg.classes)?;
    if params.ranges.len() != cfg.levels {
        return Err(Error::config(
            "train.ranges",
            format!("{} ranges for {} levels", params.ranges.len(), cfg.levels),
        ));
    }
    let c = cfg.classes;
    let levels = (0..cfg.levels)
        .map(|l| {
            let stride = cfg.stride(l);
            let len = cfg.level_len(l);
            let valid = crate::model::config::valid_at_stride(valid_len, stride);
            let (lo, hi) = params.ranges[l];
            let mut labels = Tensor::zeros(&[len, c]);
            let mut offsets = Tensor::zeros(&[len, 2 * c]);
            let mut mask = Tensor::zeros(&[len, c]);
            let mut weight = Tensor::zeros(&[len, c]);
            for t in 0..valid.min(len) {
                for k in 0..c {
                    weight.set(t, k, 1.0);
                }
                let pos = (t * stride) as f64;
                let mut best: Vec<Option<(f64, &EventAnnotation)>> = vec![None; c];
                for e in events {
                    if !(e.t_start <= pos && pos < e.t_end) {
                        continue;
                    }
                    let (ds, de) = (pos - e.t_start, e.t_end - pos);
                    let reach = ds.max(de);
                    if !(reach > lo && reach <= hi) {
                        continue;
                    }
                    let dist = (pos - e.center()).abs();
                    if let Some(r) = params.center_radius {
                        if dist > r * stride as f64 {
                            continue;
                        }
                    }
                    let slot = &mut best[e.class_id];
                    if slot.is_none_or(|(d, _)| dist < d) {
                        *slot = Some((dist, e));
                    }
                }
                for (k, hit) in best.iter().enumerate() {
                    if let Some((_, e)) = hit {
                        let s = stride as f64;
                        labels.set(t, k, 1.0);
                        mask.set(t, k, 1.0);
                        offsets.set(t, k, (pos - e.t_start) / s);
                        offsets.set(t, c + k, (e.t_end - pos) / s);
                    }
                }
            }
            LevelTargets {
                stride,
                valid,
                labels,
                offsets,
                mask,
                weight,
            }
        })
        .collect();
    Ok(TargetAssignment { levels })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(levels: usize) -> ModelConfig {
        ModelConfig {
            max_len: 32,
            levels,
            classes: 3,
            ..ModelConfig::toy()
        }
    }

    #[test]
    fn ranges_match_six_level_default() {
        let r = default_ranges(6);
        assert_eq!(
            r[..5],
            [(0.0, 4.0), (4.0, 8.0), (8.0, 16.0), (16.0, 32.0), (32.0, 64.0)]
        );
        assert_eq!(r[5].0, 64.0);
        assert!(r[5].1.is_infinite());
    }

    #[test]
    fn worked_example_offsets() {
        let cfg = cfg(1);
        let params = AssignParams {
            ranges: vec![(0.0, f64::INFINITY)],
            center_radius: None,
        };
        let ev = [EventAnnotation::new(7.0, 14.0, 1)];
        let a = assign_targets(&ev, &cfg, &params, 32).unwrap();
        let l = &a.levels[0];
        assert_eq!(l.mask.at(10, 1), 1.0);
        assert_eq!(l.labels.at(10, 1), 1.0);
        assert_eq!((l.offsets.at(10, 1), l.offsets.at(10, 3 + 1)), (3.0, 4.0));
        assert_eq!(l.mask.at(20, 1), 0.0);
        assert_eq!(l.mask.at(10, 0), 0.0);
    }

    #[test]
    fn concurrent_classes_both_positive() {
        let cfg = cfg(1);
        let params = AssignParams {
            ranges: vec![(0.0, f64::INFINITY)],
            center_radius: None,
        };
        let ev = [
            EventAnnotation::new(2.0, 12.0, 0),
            EventAnnotation::new(8.0, 20.0, 2),
        ];
        let a = assign_targets(&ev, &cfg, &params, 32).unwrap();
        let l = &a.levels[0];
        assert_eq!(l.mask.at(10, 0), 1.0);
        assert_eq!(l.mask.at(10, 2), 1.0);
        assert_eq!(l.offsets.at(10, 2), 2.0);
    }

    #[test]
    fn same_class_overlap_prefers_nearer_center() {
        let cfg = cfg(1);
        let params = AssignParams {
            ranges: vec![(0.0, f64::INFINITY)],
            center_radius: None,
        };
        let ev = [
            EventAnnotation::new(0.0, 12.0, 0),
            EventAnnotation::new(9.0, 13.0, 0),
        ];
        let a = assign_targets(&ev, &cfg, &params, 32).unwrap();
        let l = &a.levels[0];
        // t=10: centres 6 and 11.
        assert_eq!((l.offsets.at(10, 0), l.offsets.at(10, 3)), (1.0, 3.0));
    }

    #[test]
    fn rejects_out_of_range() {
        let cfg = cfg(2);
        let ev = [
            EventAnnotation::new(1.0, 3.0, 0),
            EventAnnotation::new(30.0, 40.0, 0),
        ];
        let err = assign_targets(&ev, &cfg, &AssignParams::for_levels(2), 32).unwrap_err();
        assert!(matches!(err, Error::AnnotationOutOfRange { index: 1, .. }));
    }

    #[test]
    fn padding_carries_no_weight() {
        let cfg = cfg(2);
        let a = assign_targets(&[], &cfg, &AssignParams::for_levels(2), 10).unwrap();
        assert_eq!(a.levels[0].weight.at(9, 0), 1.0);
        assert_eq!(a.levels[0].weight.at(10, 0), 0.0);
        assert_eq!(a.levels[1].valid, 5);
        assert_eq!(a.positives(), 0);
    }

    #[test]
    fn center_sampling_narrows_positives() {
        let cfg = cfg(1);
        let mut params = AssignParams {
            ranges: vec![(0.0, f64::INFINITY)],
            center_radius: None,
        };
        let ev = [EventAnnotation::new(0.0, 20.0, 0)];
        let all = assign_targets(&ev, &cfg, &params, 32).unwrap().positives();
        params.center_radius = Some(1.5);
        let near = assign_targets(&ev, &cfg, &params, 32).unwrap().positives();
        assert_eq!(all, 20);
        assert_eq!(near, 3);
    }
}
