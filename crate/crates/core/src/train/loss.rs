//! Focal classification plus 1-D generalized-IoU regression.

use crate::error::{Error, Result};
use crate::graph::{focal_term, giou_term, Graph, Var};
use crate::model::ModelOutput;
use crate::tensor::{Scalar, Tensor};

use super::targets::TargetAssignment;

#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    /// Classification weight `α`.
    pub cls: f64,
    /// Regression weight `β`.
    pub reg: f64,
    pub gamma: f64,
    pub alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            cls: 1.0,
            reg: 1.0,
            gamma: 2.0,
            alpha: 0.25,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.cls > 0.0) {
            return Err(Error::config("train.cls_weight", "must be > 0"));
        }
        if !(self.reg >= 0.0) {
            return Err(Error::config("train.reg_weight", "must be >= 0"));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::config("train.focal_gamma", "must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config("train.focal_alpha", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Focal loss of a single probability against a binary label.
pub fn focal_loss(p: f64, y: f64, gamma: f64, alpha: f64) -> f64 {
    focal_term(p, y, gamma, alpha).0
}

/// `1 - GIoU` for two segments anchored at the same timestep, given as
/// `(onset distance, offset distance)` pairs.
pub fn giou_loss_1d(pred: (f64, f64), target: (f64, f64)) -> f64 {
    giou_term(pred.0, pred.1, target.0, target.1).0
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub cls: f64,
    pub reg: f64,
    pub positives: usize,
}

/// `α · Σ L_cls / N + β · Σ 𝟙 L_reg / N` with `N = max(1, positives)`.
pub fn total_loss<T: Scalar>(
    g: &mut Graph<T>,
    out: &ModelOutput,
    targets: &TargetAssignment,
    w: &LossWeights,
) -> Result<(Var, LossBreakdown)> {
    if out.levels.len() != targets.levels.len() {
        return Err(Error::Contract(format!(
            "{} prediction levels vs {} target levels",
            out.levels.len(),
            targets.levels.len()
        )));
    }
    let mut cls_sum: Option<Var> = None;
    let mut reg_sum: Option<Var> = None;
    let mut positives = 0;
    let add = |g: &mut Graph<T>, acc: Option<Var>, v: Var| -> Result<Var> {
        match acc {
            Some(a) => g.add(a, v),
            None => Ok(v),
        }
    };
    for (lo, lt) in out.levels.iter().zip(&targets.levels) {
        let focal = g.focal_loss(
            lo.probs,
            lt.labels.cast(),
            lt.weight.cast(),
            T::of(w.gamma),
            T::of(w.alpha),
        )?;
        cls_sum = Some(add(g, cls_sum, focal)?);
        let giou = g.giou_loss(lo.offsets, lt.offsets.cast(), lt.mask.cast())?;
        reg_sum = Some(add(g, reg_sum, giou)?);
        positives += lt.positives();
    }
    let norm = T::of(1.0 / positives.max(1) as f64);
    let cls_sum = cls_sum.ok_or_else(|| Error::Contract("no pyramid levels".into()))?;
    let reg_sum = reg_sum.expect("levels present");
    let cls = g.scale(cls_sum, norm);
    let reg = g.scale(reg_sum, norm);
    let wc = g.scale(cls, T::of(w.cls));
    let wr = g.scale(reg, T::of(w.reg));
    let total = g.add(wc, wr)?;
    let read = |v: Var| g.value(v).data()[0].as_f64();
    let breakdown = LossBreakdown {
        total: read(total),
        cls: read(cls),
        reg: read(reg),
        positives,
    };
    Ok((total, breakdown))
}

/// Same objective evaluated on detached tensors, without a graph.
pub fn total_loss_detached(
    probs: &[Tensor<f64>],
    offsets: &[Tensor<f64>],
    targets: &TargetAssignment,
    w: &LossWeights,
) -> LossBreakdown {
    let mut cls = 0.0;
    let mut reg = 0.0;
    let mut positives = 0;
    for ((p, o), lt) in probs.iter().zip(offsets).zip(&targets.levels) {
        let (t, c) = p.dims2();
        for i in 0..t {
            for k in 0..c {
                if lt.weight.at(i, k) > 0.0 {
                    cls += lt.weight.at(i, k) * focal_loss(p.at(i, k), lt.labels.at(i, k), w.gamma, w.alpha);
                }
                if lt.mask.at(i, k) > 0.0 {
                    let target = (lt.offsets.at(i, k), lt.offsets.at(i, c + k));
                    if target.0 + target.1 > 0.0 {
                        reg += giou_loss_1d((o.at(i, k), o.at(i, c + k)), target);
                    }
                    positives += 1;
                }
            }
        }
    }
    let n = positives.max(1) as f64;
    LossBreakdown {
        total: w.cls * cls / n + w.reg * reg / n,
        cls: cls / n,
        reg: reg / n,
        positives,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn focal_closed_form() {
        let v = focal_loss(0.5, 1.0, 2.0, 0.25);
        assert!((v - 0.25 * 0.25 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((v - 0.04332).abs() < 1e-5);
    }

    #[test]
    fn focal_near_perfect_is_zero() {
        assert!(focal_loss(1.0 - 1e-9, 1.0, 2.0, 0.25) < 1e-12);
        assert!(focal_loss(1e-9, 0.0, 2.0, 0.25) < 1e-12);
    }

    #[test]
    fn giou_worked_example() {
        assert!((giou_loss_1d((3.0, 4.0), (2.0, 2.0)) - 3.0 / 7.0).abs() < 1e-12);
        assert_eq!(giou_loss_1d((2.5, 1.5), (2.5, 1.5)), 0.0);
    }

    #[test]
    fn giou_bounds() {
        assert!((giou_loss_1d((0.0, 0.0), (1.0, 1.0)) - 1.0).abs() < 1e-12);
        for &(a, b, c, d) in &[(0.1, 9.0, 3.0, 0.2), (5.0, 5.0, 0.0, 1.0)] {
            let l = giou_loss_1d((a, b), (c, d));
            assert!((0.0..=2.0).contains(&l));
        }
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::default().validate().is_ok());
        let bad = LossWeights {
            cls: 0.0,
            ..LossWeights::default()
        };
        assert!(bad.validate().is_err());
    }
}
