//! Reusable layers built on [`Graph`] primitives.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::param::{init, ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
    ) -> Self {
        let weight = store.add(
            format!("{name}.w"),
            init::xavier(rng, &[fan_in, fan_out], fan_in, fan_out),
        );
        let bias = bias.then(|| store.add(format!("{name}.b"), Tensor::zeros(&[fan_out])));
        Self { weight, bias }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, s: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(s, self.weight);
        let y = g.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = g.param(s, b);
                g.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        let weight = store.add(
            format!("{name}.w"),
            init::xavier(rng, &[kernel, cin, cout], kernel * cin, cout),
        );
        let bias = store.add(format!("{name}.b"), Tensor::zeros(&[cout]));
        Self {
            weight,
            bias,
            stride,
            padding,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, s: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(s, self.weight);
        let b = g.param(s, self.bias);
        g.conv1d(x, w, b, self.stride, self.padding)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.g"), Tensor::full(&[dim], T::one())),
            bias: store.add(format!("{name}.b"), Tensor::zeros(&[dim])),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, s: &ParamStore<T>, x: Var) -> Result<Var> {
        let gain = g.param(s, self.gain);
        let bias = g.param(s, self.bias);
        g.layer_norm(x, gain, bias)
    }
}

/// Optional pre-norm: identity when layer normalization is disabled.
#[derive(Clone, Debug)]
pub struct PreNorm(Option<LayerNorm>);

impl PreNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize, on: bool) -> Self {
        Self(on.then(|| LayerNorm::new(store, name, dim)))
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, s: &ParamStore<T>, x: Var) -> Result<Var> {
        match &self.0 {
            Some(ln) => ln.forward(g, s, x),
            None => Ok(x),
        }
    }
}

/// Output of one attention evaluation.
#[derive(Clone, Debug)]
pub struct Attended {
    pub output: Var,
    /// Per-head attention weights, `[tq × tk]` each.
    pub weights: Vec<Var>,
}

/// Multi-head scaled dot-product attention with full-width projections
/// split column-wise into heads.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        dim: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::config(
                "model.heads",
                format!("{dim} channels are not divisible into {heads} heads"),
            ));
        }
        let mut proj = |suffix: &str| {
            store.add(
                format!("{name}.{suffix}"),
                init::xavier(rng, &[dim, dim], dim, dim),
            )
        };
        Ok(Self {
            wq: proj("wq"),
            wk: proj("wk"),
            wv: proj("wv"),
            wo: proj("wo"),
            heads,
            dim,
        })
    }

    /// `key_valid` masks keys at index `>= key_valid` out of every softmax.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        query: Var,
        key: Var,
        value: Var,
        key_valid: Option<usize>,
    ) -> Result<Attended> {
        if g.shape(key)[0] != g.shape(value)[0] {
            return Err(Error::Contract(format!(
                "attention keys {:?} and values {:?} differ in length",
                g.shape(key),
                g.shape(value)
            )));
        }
        let wq = g.param(s, self.wq);
        let wk = g.param(s, self.wk);
        let wv = g.param(s, self.wv);
        let q = g.matmul(query, wq)?;
        let k = g.matmul(key, wk)?;
        let v = g.matmul(value, wv)?;
        let dh = self.dim / self.heads;
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    g.slice_cols(q, h * dh, (h + 1) * dh)?,
                    g.slice_cols(k, h * dh, (h + 1) * dh)?,
                    g.slice_cols(v, h * dh, (h + 1) * dh)?,
                )
            };
            let logits = g.matmul_nt(qh, kh)?;
            let logits = g.scale(logits, scale);
            let attn = g.softmax(logits, key_valid);
            weights.push(attn);
            outs.push(g.matmul(attn, vh)?);
        }
        let joined = if outs.len() == 1 {
            outs[0]
        } else {
            g.concat_cols(&outs)?
        };
        let wo = g.param(s, self.wo);
        let output = g.matmul(joined, wo)?;
        Ok(Attended { output, weights })
    }
}

/// Position-wise two-layer feed-forward with ReLU.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        dim: usize,
        hidden: usize,
    ) -> Self {
        Self {
            up: Linear::new(store, rng, &format!("{name}.up"), dim, hidden, true),
            down: Linear::new(store, rng, &format!("{name}.down"), hidden, dim, true),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, s: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.up.forward(g, s, x)?;
        let h = g.relu(h);
        self.down.forward(g, s, h)
    }
}

/// `x + FFN(norm(x))`, zeroing rows past `valid`.
#[derive(Clone, Debug)]
pub struct FeedForwardSublayer {
    pub norm: PreNorm,
    pub ffn: FeedForward,
}

impl FeedForwardSublayer {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        dim: usize,
        layer_norm: bool,
    ) -> Self {
        Self {
            norm: PreNorm::new(store, &format!("{name}.ln"), dim, layer_norm),
            ffn: FeedForward::new(store, rng, &format!("{name}.ffn"), dim, 4 * dim),
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        x: Var,
        valid: usize,
    ) -> Result<Var> {
        let n = self.norm.forward(g, s, x)?;
        let f = self.ffn.forward(g, s, n)?;
        let y = g.add(x, f)?;
        Ok(g.mask_rows(y, valid))
    }
}

/// Pre-norm transformer encoder block with key masking.
#[derive(Clone, Debug)]
pub struct SelfAttentionBlock {
    pub norm: PreNorm,
    pub attn: MultiHeadAttention,
    pub ff: FeedForwardSublayer,
}

impl SelfAttentionBlock {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        dim: usize,
        heads: usize,
        layer_norm: bool,
    ) -> Result<Self> {
        Ok(Self {
            norm: PreNorm::new(store, &format!("{name}.ln"), dim, layer_norm),
            attn: MultiHeadAttention::new(store, rng, &format!("{name}.attn"), dim, heads)?,
            ff: FeedForwardSublayer::new(store, rng, &format!("{name}.ff"), dim, layer_norm),
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        x: Var,
        valid: usize,
    ) -> Result<Var> {
        let n = self.norm.forward(g, s, x)?;
        let a = self.attn.forward(g, s, n, n, n, Some(valid))?;
        let y = g.add(x, a.output)?;
        let y = g.mask_rows(y, valid);
        self.ff.forward(g, s, y, valid)
    }
}
