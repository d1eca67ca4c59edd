use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::layers::{Conv1d, SelfAttentionBlock};
use crate::param::ParamStore;
use crate::tensor::Scalar;
use crate::types::Modality;

use super::ModelConfig;

/// Projects raw features to the shared width, then encodes unimodal
/// temporal context with stacked self-attention blocks.
#[derive(Clone, Debug)]
pub struct UnimodalEmbedder {
    pub modality: Modality,
    pub in_dim: usize,
    pub proj1: Conv1d,
    pub proj2: Conv1d,
    pub blocks: Vec<SelfAttentionBlock>,
}

impl UnimodalEmbedder {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        cfg: &ModelConfig,
        modality: Modality,
    ) -> Result<Self> {
        let (name, in_dim) = match modality {
            Modality::Audio => ("embed.audio", cfg.audio_dim),
            Modality::Visual => ("embed.visual", cfg.visual_dim),
        };
        let d = cfg.dim;
        let proj1 = Conv1d::new(store, rng, &format!("{name}.proj1"), in_dim, d, 3, 1, 1);
        let proj2 = Conv1d::new(store, rng, &format!("{name}.proj2"), d, d, 3, 1, 1);
        let blocks = (0..cfg.self_attn_layers)
            .map(|i| {
                SelfAttentionBlock::new(
                    store,
                    rng,
                    &format!("{name}.block{i}"),
                    d,
                    cfg.heads,
                    cfg.layer_norm,
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            modality,
            in_dim,
            proj1,
            proj2,
            blocks,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        raw: Var,
        valid: usize,
    ) -> Result<Var> {
        let got = g.shape(raw)[1];
        if got != self.in_dim {
            let key = match self.modality {
                Modality::Audio => "model.audio_dim",
                Modality::Visual => "model.visual_dim",
            };
            return Err(Error::config(
                key,
                format!("expected {}-D features, got {got}-D", self.in_dim),
            ));
        }
        let x = self.proj1.forward(g, s, raw)?;
        let x = g.relu(x);
        let x = self.proj2.forward(g, s, x)?;
        let mut x = g.mask_rows(x, valid);
        for block in &self.blocks {
            x = block.forward(g, s, x, valid)?;
        }
        Ok(x)
    }
}
