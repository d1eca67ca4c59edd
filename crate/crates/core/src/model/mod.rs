//! The CCNet architecture: unimodal embedding, a CMCC feature pyramid,
//! multi-granularity collaboration and shared decoder heads.

pub mod cmcc;
pub mod config;
pub mod decoder;
pub mod embed;
pub mod mtgc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::param::ParamStore;
use crate::tensor::{Scalar, Tensor};
use crate::types::{FeatureSequence, Modality};

pub use cmcc::{CmccLayer, CrossModalInteraction, TemporalConsistencyGate};
pub use config::{CmiQuery, Granularity, ModelConfig, MtgcOrder, TcgModalities};
pub use decoder::DecoderHeads;
pub use embed::UnimodalEmbedder;
pub use mtgc::{CoarseToFine, FineToCoarse, Level, PerScaleEncoder};

/// Per-timestep gate weights of one modality at one level.
#[derive(Clone, Debug, PartialEq)]
pub struct GateVector {
    pub source: Modality,
    pub weights: Vec<f64>,
}

/// Head outputs at one pyramid level, still on the graph.
#[derive(Clone, Copy, Debug)]
pub struct LevelOutput {
    /// Class probabilities `[T_l × C]`.
    pub probs: Var,
    /// Class-aware boundary distances `[T_l × 2C]`, in units of `stride`.
    pub offsets: Var,
    pub stride: usize,
    pub valid: usize,
}

#[derive(Clone, Debug)]
pub struct ModelOutput {
    pub levels: Vec<LevelOutput>,
    /// Concatenated audio-visual pyramid `Z` before MTGC.
    pub pyramid: Vec<Level>,
    /// Features entering the decoder.
    pub decoded: Vec<Level>,
    /// `(g_A, g_V)` per CMCC layer; `None` where no gate was applied.
    pub gates: Vec<(Option<Var>, Option<Var>)>,
}

/// Detached predictions at one level.
#[derive(Clone, Debug, PartialEq)]
pub struct TimestepPrediction {
    pub level: usize,
    pub stride: usize,
    pub valid: usize,
    /// `[T_l × C]`, each in `[0, 1]`.
    pub probs: Tensor<f64>,
    /// `[2 × C × T_l]`: onsets then offsets, non-negative, in stride units.
    pub offsets: Tensor<f64>,
}

impl TimestepPrediction {
    pub fn len(&self) -> usize {
        self.probs.dims2().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn classes(&self) -> usize {
        self.probs.dims2().1
    }

    pub fn prob(&self, t: usize, class: usize) -> f64 {
        self.probs.at(t, class)
    }

    /// `(d_s, d_e)` for timestep `t` and `class`, in stride units.
    pub fn distances(&self, t: usize, class: usize) -> (f64, f64) {
        let (c, n) = (self.classes(), self.len());
        let d = self.offsets.data();
        (d[class * n + t], d[c * n + class * n + t])
    }
}

#[derive(Clone, Debug)]
pub struct CcnetLayers {
    pub embed_audio: UnimodalEmbedder,
    pub embed_visual: UnimodalEmbedder,
    pub cmcc: Vec<CmccLayer>,
    pub c2f: Option<CoarseToFine>,
    pub per_scale: PerScaleEncoder,
    pub f2c: Option<FineToCoarse>,
    pub heads: DecoderHeads,
}

/// Model definition plus its parameters.
#[derive(Clone, Debug)]
pub struct Ccnet<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub layers: CcnetLayers,
}

impl<T: Scalar> Ccnet<T> {
    /// Builds the model with parameters drawn deterministically from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let store = &mut params;
        let layers = CcnetLayers {
            embed_audio: UnimodalEmbedder::new(store, &mut rng, &config, Modality::Audio)?,
            embed_visual: UnimodalEmbedder::new(store, &mut rng, &config, Modality::Visual)?,
            cmcc: (1..=config.levels)
                .map(|l| CmccLayer::new(store, &mut rng, &config, l))
                .collect::<Result<_>>()?,
            c2f: config
                .enable_c2f
                .then(|| CoarseToFine::new(store, &mut rng, &config))
                .transpose()?,
            per_scale: PerScaleEncoder::new(store, &mut rng, &config)?,
            f2c: config
                .enable_f2c
                .then(|| FineToCoarse::new(store, &mut rng, &config))
                .transpose()?,
            heads: DecoderHeads::new(store, &mut rng, &config),
        };
        Ok(Self {
            config,
            params,
            layers,
        })
    }

    /// Replaces every parameter value with the same-named entry in `other`.
    pub fn load_params(&mut self, other: &ParamStore<T>) -> Result<()> {
        if other.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "checkpoint has {} parameters, model expects {}",
                other.len(),
                self.params.len()
            )));
        }
        for p in other.iter() {
            let target = self.params.by_name_mut(&p.name)?;
            if target.value.shape() != p.value.shape() {
                return Err(Error::Dimension {
                    op: "load_params",
                    lhs: target.value.shape().to_vec(),
                    rhs: p.value.shape().to_vec(),
                });
            }
            target.value = p.value.clone();
        }
        Ok(())
    }

    /// Embeds both modalities and builds the CMCC pyramid.
    pub fn encode(
        &self,
        g: &mut Graph<T>,
        audio: &FeatureSequence<T>,
        visual: &FeatureSequence<T>,
    ) -> Result<(Vec<Level>, Vec<(Option<Var>, Option<Var>)>)> {
        let cfg = &self.config;
        for (seq, key) in [(audio, "audio"), (visual, "visual")] {
            if seq.len() != cfg.max_len {
                return Err(Error::config(
                    "model.max_len",
                    format!("{key} sequence has {} timesteps, expected {}", seq.len(), cfg.max_len),
                ));
            }
        }
        let valid = audio.valid_len.min(visual.valid_len).min(cfg.max_len);
        let s = &self.params;
        let a_in = g.input(audio.values.clone());
        let v_in = g.input(visual.values.clone());
        let mut a = self.layers.embed_audio.forward(g, s, a_in, valid)?;
        let mut v = self.layers.embed_visual.forward(g, s, v_in, valid)?;

        let mut valid_l = valid;
        let mut pyramid = Vec::with_capacity(cfg.levels);
        let mut gates = Vec::with_capacity(cfg.levels);
        for layer in &self.layers.cmcc {
            let out = layer.forward(g, s, a, v, valid_l)?;
            a = out.audio;
            v = out.visual;
            valid_l = out.valid;
            let z = g.concat_cols(&[a, v])?;
            pyramid.push(Level {
                features: z,
                valid: valid_l,
            });
            gates.push((out.gate_a, out.gate_v));
        }
        Ok((pyramid, gates))
    }

    /// Applies C2F, the per-scale encoder and F2C in the configured order.
    pub fn collaborate(&self, g: &mut Graph<T>, pyramid: &[Level]) -> Result<Vec<Level>> {
        let s = &self.params;
        let c2f = |g: &mut Graph<T>, x: Vec<Level>| match &self.layers.c2f {
            Some(b) => b.forward(g, s, &x),
            None => Ok(x),
        };
        let f2c = |g: &mut Graph<T>, x: Vec<Level>| match &self.layers.f2c {
            Some(b) => b.forward(g, s, &x),
            None => Ok(x),
        };
        let x = pyramid.to_vec();
        match self.config.mtgc_order {
            MtgcOrder::C2fThenF2c => {
                let x = c2f(g, x)?;
                let x = self.layers.per_scale.forward(g, s, &x)?;
                f2c(g, x)
            }
            MtgcOrder::F2cThenC2f => {
                let x = f2c(g, x)?;
                let x = self.layers.per_scale.forward(g, s, &x)?;
                c2f(g, x)
            }
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph<T>,
        audio: &FeatureSequence<T>,
        visual: &FeatureSequence<T>,
    ) -> Result<ModelOutput> {
        let (pyramid, gates) = self.encode(g, audio, visual)?;
        let decoded = self.collaborate(g, &pyramid)?;
        let levels = decoded
            .iter()
            .enumerate()
            .map(|(l, lvl)| {
                let (probs, offsets) = self.layers.heads.forward(g, &self.params, lvl.features)?;
                Ok(LevelOutput {
                    probs,
                    offsets,
                    stride: self.config.stride(l),
                    valid: lvl.valid,
                })
            })
            .collect::<Result<_>>()?;
        Ok(ModelOutput {
            levels,
            pyramid,
            decoded,
            gates,
        })
    }

    /// Forward pass detached into plain predictions and gate vectors.
    pub fn predict(
        &self,
        audio: &FeatureSequence<T>,
        visual: &FeatureSequence<T>,
    ) -> Result<(Vec<TimestepPrediction>, Vec<(GateVector, GateVector)>)> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, audio, visual)?;
        Ok((predictions(&g, &out), gate_vectors(&g, &out, &self.config)))
    }
}

/// Copies head outputs off the graph.
pub fn predictions<T: Scalar>(g: &Graph<T>, out: &ModelOutput) -> Vec<TimestepPrediction> {
    out.levels
        .iter()
        .enumerate()
        .map(|(level, lo)| {
            let probs: Tensor<f64> = g.value(lo.probs).cast();
            let (t, c) = probs.dims2();
            let reg = g.value(lo.offsets);
            let mut offsets = Tensor::zeros(&[2, c, t]);
            for ti in 0..t {
                for side in 0..2 {
                    for k in 0..c {
                        offsets.data_mut()[side * c * t + k * t + ti] =
                            reg.at(ti, side * c + k).as_f64();
                    }
                }
            }
            TimestepPrediction {
                level,
                stride: lo.stride,
                valid: lo.valid,
                probs,
                offsets,
            }
        })
        .collect()
}

/// Gate weights per level; gates that were not applied report 0.5.
pub fn gate_vectors<T: Scalar>(
    g: &Graph<T>,
    out: &ModelOutput,
    cfg: &ModelConfig,
) -> Vec<(GateVector, GateVector)> {
    out.gates
        .iter()
        .enumerate()
        .map(|(l, (ga, gv))| {
            let len = cfg.level_len(l);
            let read = |v: &Option<Var>, source| GateVector {
                source,
                weights: match v {
                    Some(v) => g.value(*v).data().iter().map(|x| x.as_f64()).collect(),
                    None => vec![0.5; len],
                },
            };
            (read(ga, Modality::Audio), read(gv, Modality::Visual))
        })
        .collect()
}
