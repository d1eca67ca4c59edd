//! Cross-modal consistency collaboration: cross-modal interaction (CMI)
//! followed by temporal consistency gating (TCG), one layer per pyramid level.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::layers::{Conv1d, FeedForwardSublayer, Linear, MultiHeadAttention, PreNorm};
use crate::param::ParamStore;
use crate::tensor::Scalar;

use super::config::{valid_at_stride, CmiQuery, ModelConfig, TcgModalities};

fn check_lengths<T: Scalar>(g: &Graph<T>, vars: &[Var]) -> Result<()> {
    let t = g.shape(vars[0])[0];
    if let Some(&bad) = vars.iter().find(|&&v| g.shape(v)[0] != t) {
        return Err(Error::Contract(format!(
            "modality lengths differ: {t} vs {}",
            g.shape(bad)[0]
        )));
    }
    Ok(())
}

/// Residual cross-attention in both directions, each followed by a feed-forward sublayer.
#[derive(Clone, Debug)]
pub struct CrossModalInteraction {
    pub norm_a: PreNorm,
    pub norm_v: PreNorm,
    pub attn_a: MultiHeadAttention,
    pub attn_v: MultiHeadAttention,
    pub ff_a: FeedForwardSublayer,
    pub ff_v: FeedForwardSublayer,
    pub query: CmiQuery,
}

impl CrossModalInteraction {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cfg: &ModelConfig,
    ) -> Result<Self> {
        let (d, ln) = (cfg.dim, cfg.layer_norm);
        Ok(Self {
            norm_a: PreNorm::new(store, &format!("{name}.ln_a"), d, ln),
            norm_v: PreNorm::new(store, &format!("{name}.ln_v"), d, ln),
            attn_a: MultiHeadAttention::new(store, rng, &format!("{name}.attn_a"), d, cfg.heads)?,
            attn_v: MultiHeadAttention::new(store, rng, &format!("{name}.attn_v"), d, cfg.heads)?,
            ff_a: FeedForwardSublayer::new(store, rng, &format!("{name}.ff_a"), d, ln),
            ff_v: FeedForwardSublayer::new(store, rng, &format!("{name}.ff_v"), d, ln),
            query: cfg.cmi_query,
        })
    }

    /// Returns the updated `(audio, visual)` features.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        audio: Var,
        visual: Var,
        valid: usize,
    ) -> Result<(Var, Var)> {
        check_lengths(g, &[audio, visual])?;
        let na = self.norm_a.forward(g, s, audio)?;
        let nv = self.norm_v.forward(g, s, visual)?;
        let (qa, kva, qv, kvv) = match self.query {
            CmiQuery::Counterpart => (nv, na, na, nv),
            CmiQuery::Own => (na, nv, nv, na),
        };
        let da = self.attn_a.forward(g, s, qa, kva, kva, Some(valid))?;
        let dv = self.attn_v.forward(g, s, qv, kvv, kvv, Some(valid))?;
        let a = g.add(audio, da.output)?;
        let a = g.mask_rows(a, valid);
        let v = g.add(visual, dv.output)?;
        let v = g.mask_rows(v, valid);
        let a = self.ff_a.forward(g, s, a, valid)?;
        let v = self.ff_v.forward(g, s, v, valid)?;
        Ok((a, v))
    }
}

/// Per-timestep sigmoid gate from one modality's intra-modal attention,
/// applied with a residual to the other modality.
#[derive(Clone, Debug)]
pub struct TemporalConsistencyGate {
    pub norm_a: PreNorm,
    pub norm_v: PreNorm,
    pub attn_a: MultiHeadAttention,
    pub attn_v: MultiHeadAttention,
    /// `W_a`: audio attention output to one logit per timestep.
    pub proj_a: Linear,
    /// `W_v`: visual attention output to one logit per timestep.
    pub proj_v: Linear,
    pub modalities: TcgModalities,
}

/// Features after gating and the gate vectors that were applied.
#[derive(Clone, Debug)]
pub struct Gated {
    pub audio: Var,
    pub visual: Var,
    /// Gate computed from audio, applied to visual features.
    pub gate_a: Option<Var>,
    /// Gate computed from visual, applied to audio features.
    pub gate_v: Option<Var>,
}

impl TemporalConsistencyGate {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cfg: &ModelConfig,
    ) -> Result<Self> {
        let (d, ln) = (cfg.dim, cfg.layer_norm);
        Ok(Self {
            norm_a: PreNorm::new(store, &format!("{name}.ln_a"), d, ln),
            norm_v: PreNorm::new(store, &format!("{name}.ln_v"), d, ln),
            attn_a: MultiHeadAttention::new(store, rng, &format!("{name}.attn_a"), d, cfg.heads)?,
            attn_v: MultiHeadAttention::new(store, rng, &format!("{name}.attn_v"), d, cfg.heads)?,
            proj_a: Linear::new(store, rng, &format!("{name}.gate_a"), d, 1, true),
            proj_v: Linear::new(store, rng, &format!("{name}.gate_v"), d, 1, true),
            modalities: cfg.tcg_modalities,
        })
    }

    fn gate<T: Scalar>(
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        norm: &PreNorm,
        attn: &MultiHeadAttention,
        proj: &Linear,
        x: Var,
        valid: usize,
    ) -> Result<Var> {
        let n = norm.forward(g, s, x)?;
        let a = attn.forward(g, s, n, n, n, Some(valid))?;
        let logit = proj.forward(g, s, a.output)?;
        Ok(g.sigmoid(logit))
    }

    /// `pre_*` are the layer-entry features the gates are computed from;
    /// `post_*` are the cross-modal outputs the gates scale.
    #[allow(clippy::too_many_arguments)]
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        pre_audio: Var,
        pre_visual: Var,
        post_audio: Var,
        post_visual: Var,
        valid: usize,
    ) -> Result<Gated> {
        check_lengths(g, &[pre_audio, pre_visual, post_audio, post_visual])?;
        let gate_audio_features = self.modalities != TcgModalities::VisualOnly;
        let gate_visual_features = self.modalities != TcgModalities::AudioOnly;

        let mut out = Gated {
            audio: post_audio,
            visual: post_visual,
            gate_a: None,
            gate_v: None,
        };
        if gate_audio_features {
            let gv = Self::gate(g, s, &self.norm_v, &self.attn_v, &self.proj_v, pre_visual, valid)?;
            let scaled = g.mul_col(post_audio, gv)?;
            let a = g.add(post_audio, scaled)?;
            out.audio = g.mask_rows(a, valid);
            out.gate_v = Some(gv);
        }
        if gate_visual_features {
            let ga = Self::gate(g, s, &self.norm_a, &self.attn_a, &self.proj_a, pre_audio, valid)?;
            let scaled = g.mul_col(post_visual, ga)?;
            let v = g.add(post_visual, scaled)?;
            out.visual = g.mask_rows(v, valid);
            out.gate_a = Some(ga);
        }
        Ok(out)
    }
}

/// One CMCC layer: strided downsampling of both streams, then CMI and TCG.
#[derive(Clone, Debug)]
pub struct CmccLayer {
    /// 1-based pyramid level produced by this layer.
    pub level: usize,
    pub down_a: Conv1d,
    pub down_v: Conv1d,
    pub cmi: Option<CrossModalInteraction>,
    pub tcg: Option<TemporalConsistencyGate>,
}

#[derive(Clone, Debug)]
pub struct CmccOutput {
    pub audio: Var,
    pub visual: Var,
    pub valid: usize,
    pub gate_a: Option<Var>,
    pub gate_v: Option<Var>,
}

impl CmccLayer {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        cfg: &ModelConfig,
        level: usize,
    ) -> Result<Self> {
        let name = format!("cmcc{level}");
        let stride = if level == 1 { 1 } else { 2 };
        let d = cfg.dim;
        Ok(Self {
            level,
            down_a: Conv1d::new(store, rng, &format!("{name}.down_a"), d, d, 3, stride, 1),
            down_v: Conv1d::new(store, rng, &format!("{name}.down_v"), d, d, 3, stride, 1),
            cmi: cfg
                .enable_cmi
                .then(|| CrossModalInteraction::new(store, rng, &format!("{name}.cmi"), cfg))
                .transpose()?,
            tcg: cfg
                .enable_tcg
                .then(|| TemporalConsistencyGate::new(store, rng, &format!("{name}.tcg"), cfg))
                .transpose()?,
        })
    }

    pub fn stride(&self) -> usize {
        self.down_a.stride
    }

    /// Downsampling only, without either branch.
    pub fn downsample<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        audio: Var,
        visual: Var,
        valid: usize,
    ) -> Result<(Var, Var, usize)> {
        check_lengths(g, &[audio, visual])?;
        let valid = valid_at_stride(valid, self.stride());
        let a = self.down_a.forward(g, s, audio)?;
        let a = g.mask_rows(a, valid);
        let v = self.down_v.forward(g, s, visual)?;
        let v = g.mask_rows(v, valid);
        Ok((a, v, valid))
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        audio: Var,
        visual: Var,
        valid: usize,
    ) -> Result<CmccOutput> {
        let (a, v, valid) = self.downsample(g, s, audio, visual, valid)?;
        let (ha, hv) = match &self.cmi {
            Some(cmi) => cmi.forward(g, s, a, v, valid)?,
            None => (a, v),
        };
        let gated = match &self.tcg {
            Some(tcg) => tcg.forward(g, s, a, v, ha, hv, valid)?,
            None => Gated {
                audio: ha,
                visual: hv,
                gate_a: None,
                gate_v: None,
            },
        };
        Ok(CmccOutput {
            audio: gated.audio,
            visual: gated.visual,
            valid,
            gate_a: gated.gate_a,
            gate_v: gated.gate_v,
        })
    }
}
