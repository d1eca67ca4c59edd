//! Multi-temporal granularity collaboration between pyramid levels:
//! coarse-to-fine (C2F), fine-to-coarse (F2C) and a per-scale encoder.

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::layers::{FeedForwardSublayer, MultiHeadAttention, PreNorm, SelfAttentionBlock};
use crate::param::{ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

use super::config::{Granularity, ModelConfig};

/// Features at one pyramid level plus their valid length.
#[derive(Clone, Copy, Debug)]
pub struct Level {
    pub features: Var,
    pub valid: usize,
}

/// Temporal upsampling matrix `[fine × coarse]` initialised to linear
/// interpolation (half-pixel centres, clamped at the ends) scaled by `weight`.
fn upsample_init<T: Scalar>(fine: usize, coarse: usize, weight: f64) -> Tensor<T> {
    let ratio = fine as f64 / coarse as f64;
    let mut w = Tensor::zeros(&[fine, coarse]);
    for t in 0..fine {
        let x = ((t as f64 + 0.5) / ratio - 0.5).clamp(0.0, (coarse - 1) as f64);
        let lo = x.floor() as usize;
        let frac = x - lo as f64;
        let hi = (lo + 1).min(coarse - 1);
        w.set(t, lo, T::of(weight * (1.0 - frac)));
        if hi != lo {
            w.set(t, hi, T::of(weight * frac));
        }
    }
    w
}

#[derive(Clone, Debug)]
pub struct C2fBlock {
    /// 0-based level refined by this block.
    pub level: usize,
    /// `(coarser level, W_u)` pairs summed to form the query.
    pub sources: Vec<(usize, ParamId)>,
    pub norm_q: PreNorm,
    pub norm_kv: PreNorm,
    pub attn: MultiHeadAttention,
    pub ff: FeedForwardSublayer,
}

impl C2fBlock {
    /// `U = ReLU(Σ W_u · Z^j)`, the time-upsampled coarse context for this level.
    pub fn coarse_query<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        levels: &[Level],
    ) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for &(j, wu) in &self.sources {
            let w = g.param(s, wu);
            let up = g.matmul(w, levels[j].features)?;
            acc = Some(match acc {
                Some(prev) => g.add(prev, up)?,
                None => up,
            });
        }
        let u = acc.expect("C2F block without sources");
        Ok(g.relu(u))
    }
}

#[derive(Clone, Debug)]
pub struct CoarseToFine {
    pub blocks: Vec<C2fBlock>,
}

impl CoarseToFine {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        cfg: &ModelConfig,
    ) -> Result<Self> {
        let width = cfg.width();
        let mut blocks = Vec::new();
        for k in 0..cfg.levels.saturating_sub(1) {
            let name = format!("c2f{}", k + 1);
            let coarser: Vec<usize> = match cfg.granularity {
                Granularity::Adjacent => vec![k + 1],
                Granularity::All => (k + 1..cfg.levels).collect(),
            };
            let weight = 1.0 / coarser.len() as f64;
            let sources = coarser
                .iter()
                .map(|&j| {
                    let w = upsample_init(cfg.level_len(k), cfg.level_len(j), weight);
                    (j, store.add(format!("{name}.wu{}", j + 1), w))
                })
                .collect();
            blocks.push(C2fBlock {
                level: k,
                sources,
                norm_q: PreNorm::new(store, &format!("{name}.ln_q"), width, cfg.layer_norm),
                norm_kv: PreNorm::new(store, &format!("{name}.ln_kv"), width, cfg.layer_norm),
                attn: MultiHeadAttention::new(store, rng, &format!("{name}.attn"), width, cfg.heads)?,
                ff: FeedForwardSublayer::new(store, rng, &format!("{name}.ff"), width, cfg.layer_norm),
            });
        }
        Ok(Self { blocks })
    }

    /// `G^k = MHA(U^k, Z^k, Z^k)` for every level but the coarsest, which passes through.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        levels: &[Level],
    ) -> Result<Vec<Level>> {
        let mut out = Vec::with_capacity(levels.len());
        for block in &self.blocks {
            let z = levels[block.level];
            let u = block.coarse_query(g, s, levels)?;
            let q = block.norm_q.forward(g, s, u)?;
            let kv = block.norm_kv.forward(g, s, z.features)?;
            let attended = block.attn.forward(g, s, q, kv, kv, Some(z.valid))?;
            let x = g.mask_rows(attended.output, z.valid);
            let x = block.ff.forward(g, s, x, z.valid)?;
            out.push(Level {
                features: x,
                valid: z.valid,
            });
        }
        if let Some(&last) = levels.last() {
            out.push(last);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct F2cBlock {
    /// 0-based level updated by this block; always `>= 1`.
    pub level: usize,
    pub norm_q: PreNorm,
    pub norm_kv: PreNorm,
    pub attn: MultiHeadAttention,
    pub ff: FeedForwardSublayer,
}

#[derive(Clone, Debug)]
pub struct FineToCoarse {
    pub blocks: Vec<F2cBlock>,
    pub granularity: Granularity,
}

impl FineToCoarse {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        cfg: &ModelConfig,
    ) -> Result<Self> {
        let width = cfg.width();
        let blocks = (1..cfg.levels)
            .map(|m| {
                let name = format!("f2c{}", m + 1);
                Ok(F2cBlock {
                    level: m,
                    norm_q: PreNorm::new(store, &format!("{name}.ln_q"), width, cfg.layer_norm),
                    norm_kv: PreNorm::new(store, &format!("{name}.ln_kv"), width, cfg.layer_norm),
                    attn: MultiHeadAttention::new(
                        store,
                        rng,
                        &format!("{name}.attn"),
                        width,
                        cfg.heads,
                    )?,
                    ff: FeedForwardSublayer::new(
                        store,
                        rng,
                        &format!("{name}.ff"),
                        width,
                        cfg.layer_norm,
                    ),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            blocks,
            granularity: cfg.granularity,
        })
    }

    /// `O^1 = G^1`; `O^m = G^m + MHA(G^m, pool(O^{m-1}), pool(O^{m-1}))`, chained upward.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        levels: &[Level],
    ) -> Result<Vec<Level>> {
        let mut out: Vec<Level> = Vec::with_capacity(levels.len());
        if let Some(&first) = levels.first() {
            out.push(first);
        }
        for block in &self.blocks {
            let m = block.level;
            let cur = levels[m];
            let finer: Vec<usize> = match self.granularity {
                Granularity::Adjacent => vec![m - 1],
                Granularity::All => (0..m).collect(),
            };
            let mut pooled: Option<Var> = None;
            for j in finer {
                let window = 1 << (m - j);
                let p = g.maxpool1d(out[j].features, window, window)?;
                pooled = Some(match pooled {
                    Some(prev) => g.add(prev, p)?,
                    None => p,
                });
            }
            let pooled = pooled.expect("F2C block without finer level");
            let q = block.norm_q.forward(g, s, cur.features)?;
            let kv = block.norm_kv.forward(g, s, pooled)?;
            let attended = block.attn.forward(g, s, q, kv, kv, Some(cur.valid))?;
            let x = g.add(cur.features, attended.output)?;
            let x = g.mask_rows(x, cur.valid);
            let x = block.ff.forward(g, s, x, cur.valid)?;
            out.push(Level {
                features: x,
                valid: cur.valid,
            });
        }
        Ok(out)
    }
}

/// Independent self-attention stack at each pyramid level.
#[derive(Clone, Debug)]
pub struct PerScaleEncoder {
    pub levels: Vec<Vec<SelfAttentionBlock>>,
}

impl PerScaleEncoder {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        cfg: &ModelConfig,
    ) -> Result<Self> {
        let levels = (0..cfg.levels)
            .map(|l| {
                (0..cfg.per_scale_depth)
                    .map(|i| {
                        SelfAttentionBlock::new(
                            store,
                            rng,
                            &format!("scale{}.block{i}", l + 1),
                            cfg.width(),
                            cfg.heads,
                            cfg.layer_norm,
                        )
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        Ok(Self { levels })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        levels: &[Level],
    ) -> Result<Vec<Level>> {
        levels
            .iter()
            .zip(&self.levels)
            .map(|(lvl, blocks)| {
                let mut x = lvl.features;
                for b in blocks {
                    x = b.forward(g, s, x, lvl.valid)?;
                }
                Ok(Level {
                    features: x,
                    valid: lvl.valid,
                })
            })
            .collect()
    }
}
