use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::layers::{Conv1d, LayerNorm};
use crate::param::ParamStore;
use crate::tensor::{Scalar, Tensor};

use super::ModelConfig;

/// Prior probability used to initialise the classification bias.
const CLS_PRIOR: f64 = 0.01;

/// Classification and class-aware regression heads shared by every level.
#[derive(Clone, Debug)]
pub struct DecoderHeads {
    pub cls: [Conv1d; 3],
    pub reg: [Conv1d; 3],
    /// LayerNorm after each hidden conv, `[cls0, cls1, reg0, reg1]`.
    pub norms: Option<[LayerNorm; 4]>,
    pub classes: usize,
}

impl DecoderHeads {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        cfg: &ModelConfig,
    ) -> Self {
        let w = cfg.width();
        let c = cfg.classes;
        let mut conv = |name: &str, cout: usize| Conv1d::new(store, rng, name, w, cout, 3, 1, 1);
        let cls = [
            conv("head.cls0", w),
            conv("head.cls1", w),
            conv("head.cls2", c),
        ];
        let reg = [
            conv("head.reg0", w),
            conv("head.reg1", w),
            conv("head.reg2", 2 * c),
        ];
        let norms = cfg.head_norm.then(|| {
            ["head.cls0.ln", "head.cls1.ln", "head.reg0.ln", "head.reg1.ln"]
                .map(|name| LayerNorm::new(store, name, w))
        });
        let prior = -((1.0 - CLS_PRIOR) / CLS_PRIOR).ln();
        store.get_mut(cls[2].bias).value = Tensor::full(&[c], T::of(prior));
        store.get_mut(reg[2].bias).value = Tensor::full(&[2 * c], T::one());
        Self {
            cls,
            reg,
            norms,
            classes: c,
        }
    }

    /// Returns `(probabilities [t × C], offsets [t × 2C])`; offset columns
    /// `[0, C)` are onsets and `[C, 2C)` are offsets.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        x: Var,
    ) -> Result<(Var, Var)> {
        let mut h = x;
        for (i, conv) in self.cls.iter().enumerate() {
            h = conv.forward(g, s, h)?;
            if i < 2 {
                h = self.hidden(g, s, h, i)?;
            }
        }
        let probs = g.sigmoid(h);

        let mut r = x;
        for (i, conv) in self.reg.iter().enumerate() {
            r = conv.forward(g, s, r)?;
            r = if i < 2 { self.hidden(g, s, r, 2 + i)? } else { g.relu(r) };
        }
        Ok((probs, r))
    }

    fn hidden<T: Scalar>(&self, g: &mut Graph<T>, s: &ParamStore<T>, x: Var, norm: usize) -> Result<Var> {
        let x = match &self.norms {
            Some(norms) => norms[norm].forward(g, s, x)?,
            None => x,
        };
        Ok(g.relu(x))
    }
}
