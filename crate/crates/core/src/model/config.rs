use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Which modality's post-interaction features receive a temporal consistency gate.
///
/// `AudioOnly` gates the audio features (with the gate computed from the visual
/// stream); `VisualOnly` gates the visual features (gate from audio).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TcgModalities {
    Both,
    AudioOnly,
    VisualOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MtgcOrder {
    C2fThenF2c,
    F2cThenC2f,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Granularity {
    /// Only the neighbouring level supplies coarse/fine context.
    Adjacent,
    /// Every coarser (C2F) or finer (F2C) level, aligned in time and summed.
    All,
}

/// Role assignment inside cross-modal interaction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CmiQuery {
    /// `F_A + MHA(F_V, F_A, F_A)`: the counterpart modality queries.
    Counterpart,
    /// `F_A + MHA(F_A, F_V, F_V)`: the updated modality queries the counterpart.
    Own,
}

macro_rules! text_enum {
    ($ty:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$variant => $text),+ })
            }
        }

        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($text => Ok($ty::$variant),)+
                    other => Err(format!(
                        "unknown value `{other}`, expected one of: {}",
                        [$($text),+].join(", ")
                    )),
                }
            }
        }
    };
}

text_enum!(TcgModalities { Both => "both", AudioOnly => "audio_only", VisualOnly => "visual_only" });
text_enum!(MtgcOrder { C2fThenF2c => "c2f_then_f2c", F2cThenC2f => "f2c_then_c2f" });
text_enum!(Granularity { Adjacent => "adjacent", All => "all" });
text_enum!(CmiQuery { Counterpart => "counterpart", Own => "own" });

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Maximum sequence length `T` in timesteps.
    pub max_len: usize,
    /// Embedding width `D`; pyramid features are `2D` wide.
    pub dim: usize,
    pub audio_dim: usize,
    pub visual_dim: usize,
    pub classes: usize,
    /// Unimodal self-attention depth `L_s`.
    pub self_attn_layers: usize,
    /// Pyramid depth `L_c`.
    pub levels: usize,
    pub heads: usize,
    pub enable_cmi: bool,
    pub enable_tcg: bool,
    pub tcg_modalities: TcgModalities,
    pub enable_c2f: bool,
    pub enable_f2c: bool,
    pub mtgc_order: MtgcOrder,
    pub granularity: Granularity,
    pub per_scale_depth: usize,
    pub layer_norm: bool,
    /// LayerNorm after each hidden decoder conv.
    pub head_norm: bool,
    pub cmi_query: CmiQuery,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl ModelConfig {
    /// Full-scale profile: `T = 224`, `L_s = 2`, `L_c = 6`, 128-D audio, 2048-D visual.
    pub fn full() -> Self {
        Self {
            max_len: 224,
            dim: 256,
            audio_dim: 128,
            visual_dim: 2048,
            classes: 100,
            self_attn_layers: 2,
            levels: 6,
            heads: 4,
            enable_cmi: true,
            enable_tcg: true,
            tcg_modalities: TcgModalities::Both,
            enable_c2f: true,
            enable_f2c: true,
            mtgc_order: MtgcOrder::C2fThenF2c,
            granularity: Granularity::Adjacent,
            per_scale_depth: 1,
            layer_norm: true,
            head_norm: true,
            cmi_query: CmiQuery::Counterpart,
        }
    }

    /// Small profile that trains in minutes on one core.
    pub fn toy() -> Self {
        Self {
            max_len: 64,
            dim: 32,
            audio_dim: 128,
            visual_dim: 256,
            classes: 5,
            self_attn_layers: 1,
            levels: 4,
            heads: 4,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("model.max_len", self.max_len),
            ("model.dim", self.dim),
            ("model.audio_dim", self.audio_dim),
            ("model.visual_dim", self.visual_dim),
            ("model.classes", self.classes),
            ("model.levels", self.levels),
            ("model.heads", self.heads),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if self.levels > 16 {
            return Err(Error::config("model.levels", "at most 16 levels"));
        }
        let coarsest = 1usize << (self.levels - 1);
        if !self.max_len.is_multiple_of(coarsest) {
            return Err(Error::config(
                "model.max_len",
                format!(
                    "{} is not divisible by 2^(levels-1) = {coarsest}",
                    self.max_len
                ),
            ));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::config(
                "model.heads",
                format!("dim {} is not divisible by {} heads", self.dim, self.heads),
            ));
        }
        Ok(())
    }

    /// Cumulative stride of pyramid level `level` (0-based).
    pub fn stride(&self, level: usize) -> usize {
        1 << level
    }

    /// Timesteps at pyramid level `level` (0-based).
    pub fn level_len(&self, level: usize) -> usize {
        self.max_len / self.stride(level)
    }

    pub fn level_lens(&self) -> Vec<usize> {
        (0..self.levels).map(|l| self.level_len(l)).collect()
    }

    pub fn width(&self) -> usize {
        2 * self.dim
    }
}

/// Valid timesteps after downsampling a sequence with `valid` valid entries by `stride`.
pub fn valid_at_stride(valid: usize, stride: usize) -> usize {
    valid.div_ceil(stride)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_profile_geometry() {
        let cfg = ModelConfig::full();
        cfg.validate().unwrap();
        assert_eq!(cfg.level_lens(), vec![224, 112, 56, 28, 14, 7]);
        assert_eq!(cfg.self_attn_layers, 2);
    }

    #[test]
    fn rejects_indivisible_length() {
        let cfg = ModelConfig {
            max_len: 60,
            levels: 4,
            ..ModelConfig::toy()
        };
        match cfg.validate() {
            Err(Error::Config { key, .. }) => assert_eq!(key, "model.max_len"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_heads() {
        let cfg = ModelConfig {
            heads: 3,
            ..ModelConfig::toy()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config { key, .. }) if key == "model.heads"));
    }

    #[test]
    fn enum_text_roundtrip() {
        for v in [MtgcOrder::C2fThenF2c, MtgcOrder::F2cThenC2f] {
            assert_eq!(v.to_string().parse::<MtgcOrder>().unwrap(), v);
        }
        assert!("sideways".parse::<Granularity>().is_err());
    }
}
