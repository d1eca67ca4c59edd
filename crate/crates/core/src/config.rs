//! Flat `key=value` run configuration with `model.*`, `train.*`, `nms.*`,
//! `eval.*` and `data.*` sections.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::model::ModelConfig;
use crate::postprocess::{DecodeConfig, SoftNmsConfig};
use crate::synth::SynthConfig;
use crate::train::{default_ranges, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    Toy,
    Full,
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "toy" => Ok(Profile::Toy),
            "full" => Ok(Profile::Full),
            other => Err(format!("unknown profile `{other}`, expected toy or full")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Recompute regression ranges from `model.levels` instead of `train.ranges`.
    pub auto_ranges: bool,
    pub decode: DecodeConfig,
    pub nms: SoftNmsConfig,
    pub eval: EvalConfig,
    /// Generator settings; shapes and class count follow `model`.
    pub data: SynthConfig,
    pub test_videos: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl RunConfig {
    pub fn profile(p: Profile) -> Self {
        match p {
            Profile::Toy => Self::toy(),
            Profile::Full => Self::full(),
        }
    }

    pub fn toy() -> Self {
        let model = ModelConfig::toy();
        let mut train = TrainConfig::full(model.levels);
        train.epochs = 30;
        train.batch_size = 8;
        train.optimizer.lr = 2e-3;
        train.optimizer.warmup_steps = 40;
        // 30 epochs of 38 batches.
        train.optimizer.decay_steps = 1140;
        let mut cfg = Self {
            train,
            auto_ranges: true,
            decode: DecodeConfig::default(),
            nms: SoftNmsConfig::default(),
            eval: EvalConfig::default(),
            data: SynthConfig::default(),
            test_videos: 60,
            model,
        };
        cfg.sync();
        cfg
    }

    pub fn full() -> Self {
        let model = ModelConfig::full();
        let mut cfg = Self {
            train: TrainConfig::full(model.levels),
            auto_ranges: true,
            decode: DecodeConfig::default(),
            nms: SoftNmsConfig::default(),
            eval: EvalConfig::default(),
            data: SynthConfig {
                videos: 1000,
                ..SynthConfig::default()
            },
            test_videos: 200,
            model,
        };
        cfg.sync();
        cfg
    }

    /// Propagates shared settings between sections.
    fn sync(&mut self) {
        if self.auto_ranges {
            self.train.assign.ranges = default_ranges(self.model.levels);
        }
        self.data.max_len = self.model.max_len;
        self.data.audio_dim = self.model.audio_dim;
        self.data.visual_dim = self.model.visual_dim;
        self.data.classes = self.model.classes;
    }

    /// Sets the seed used for data generation and for model initialization and shuffling.
    pub fn set_seed(&mut self, seed: u64) {
        self.train.seed = seed;
        self.data.seed = seed;
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let entry = KEYS
            .iter()
            .find(|k| k.key == key)
            .ok_or_else(|| Error::config(key, "unknown configuration key"))?;
        (entry.set)(self, value.trim()).map_err(|detail| Error::config(key, detail))?;
        if key == "train.ranges" {
            self.auto_ranges = value.trim() == "auto";
        }
        self.sync();
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        KEYS.iter().find(|k| k.key == key).map(|k| (k.get)(self))
    }

    /// Applies `text` on top of `self`. A `profile=` line resets the base first,
    /// wherever it appears.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut pairs = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}", n + 1), format!("expected key=value, got `{line}`"))
            })?;
            pairs.push((k.trim(), v.trim()));
        }
        if let Some((_, p)) = pairs.iter().rev().find(|(k, _)| *k == "profile") {
            let p: Profile = p.parse().map_err(|e: String| Error::config("profile", e))?;
            *self = Self::profile(p);
        }
        for (k, v) in pairs.into_iter().filter(|(k, _)| *k != "profile") {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::toy();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every key with its effective value; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for k in KEYS {
            let _ = writeln!(out, "{}={}", k.key, (k.get)(self));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.train.assign.ranges.len() != self.model.levels {
            return Err(Error::config(
                "train.ranges",
                format!(
                    "{} ranges for {} levels",
                    self.train.assign.ranges.len(),
                    self.model.levels
                ),
            ));
        }
        if !(self.nms.sigma > 0.0) {
            return Err(Error::config("nms.sigma", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.nms.score_floor) {
            return Err(Error::config("nms.score_floor", "must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.nms.iou_threshold) {
            return Err(Error::config("nms.iou_threshold", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.decode.score_threshold) {
            return Err(Error::config("nms.score_threshold", "must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.eval.bucket_threshold) {
            return Err(Error::config("eval.bucket_threshold", "must lie in [0, 1)"));
        }
        self.data.validate()
    }
}

/// One documented configuration key.
pub struct KeySpec {
    pub key: &'static str,
    pub doc: &'static str,
    get: fn(&RunConfig) -> String,
    set: fn(&mut RunConfig, &str) -> std::result::Result<(), String>,
}

fn parse<T: FromStr>(v: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("cannot parse `{v}`: {e}"))
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        other => Err(format!("expected true or false, got `{other}`")),
    }
}

fn format_ranges(r: &[(f64, f64)]) -> String {
    r.iter().map(|(a, b)| format!("{a}:{b}")).collect::<Vec<_>>().join(",")
}

fn parse_ranges(v: &str) -> std::result::Result<Option<Vec<(f64, f64)>>, String> {
    if v == "auto" {
        return Ok(None);
    }
    v.split(',')
        .map(|pair| {
            let (a, b) = pair
                .split_once(':')
                .ok_or_else(|| format!("range `{pair}` is not lo:hi"))?;
            let (a, b): (f64, f64) = (parse(a.trim())?, parse(b.trim())?);
            if !(a >= 0.0 && b > a) {
                return Err(format!("range `{pair}` needs 0 <= lo < hi"));
            }
            Ok((a, b))
        })
        .collect::<std::result::Result<Vec<_>, _>>()
        .map(Some)
}

macro_rules! key {
    ($key:literal, $doc:literal, |$c:ident| $field:expr, parse) => {
        KeySpec {
            key: $key,
            doc: $doc,
            get: |$c| $field.to_string(),
            set: |$c, v| {
                $field = parse(v)?;
                Ok(())
            },
        }
    };
    ($key:literal, $doc:literal, |$c:ident| $field:expr, bool) => {
        KeySpec {
            key: $key,
            doc: $doc,
            get: |$c| $field.to_string(),
            set: |$c, v| {
                $field = parse_bool(v)?;
                Ok(())
            },
        }
    };
}

pub static KEYS: &[KeySpec] = &[
    key!("model.max_len", "maximum sequence length T; divisible by 2^(levels-1)", |c| c.model.max_len, parse),
    key!("model.dim", "embedding width D; pyramid features are 2D wide", |c| c.model.dim, parse),
    key!("model.audio_dim", "audio feature width d_a", |c| c.model.audio_dim, parse),
    key!("model.visual_dim", "visual feature width d_v", |c| c.model.visual_dim, parse),
    key!("model.classes", "number of event classes C", |c| c.model.classes, parse),
    key!("model.self_attn_layers", "unimodal self-attention depth L_s", |c| c.model.self_attn_layers, parse),
    key!("model.levels", "pyramid depth L_c (number of CMCC layers)", |c| c.model.levels, parse),
    key!("model.heads", "attention heads; must divide model.dim", |c| c.model.heads, parse),
    key!("model.enable_cmi", "cross-modal interaction branch", |c| c.model.enable_cmi, bool),
    key!("model.enable_tcg", "temporal consistency gate branch", |c| c.model.enable_tcg, bool),
    key!("model.tcg_modalities", "gated modality: both, audio_only, visual_only", |c| c.model.tcg_modalities, parse),
    key!("model.enable_c2f", "coarse-to-fine collaboration", |c| c.model.enable_c2f, bool),
    key!("model.enable_f2c", "fine-to-coarse collaboration", |c| c.model.enable_f2c, bool),
    key!("model.mtgc_order", "c2f_then_f2c or f2c_then_c2f", |c| c.model.mtgc_order, parse),
    key!("model.granularity", "adjacent or all levels as context", |c| c.model.granularity, parse),
    key!("model.per_scale_depth", "self-attention blocks per level between C2F and F2C", |c| c.model.per_scale_depth, parse),
    key!("model.layer_norm", "pre-norm LayerNorm in attention blocks", |c| c.model.layer_norm, bool),
    key!("model.head_norm", "LayerNorm after each hidden decoder conv", |c| c.model.head_norm, bool),
    key!("model.cmi_query", "counterpart or own modality supplies CMI queries", |c| c.model.cmi_query, parse),
    key!("train.epochs", "training epochs", |c| c.train.epochs, parse),
    key!("train.batch_size", "videos per optimizer step", |c| c.train.batch_size, parse),
    key!("train.lr", "Adam learning rate", |c| c.train.optimizer.lr, parse),
    key!("train.weight_decay", "decoupled weight decay", |c| c.train.optimizer.weight_decay, parse),
    key!("train.beta1", "Adam first-moment decay", |c| c.train.optimizer.beta1, parse),
    key!("train.beta2", "Adam second-moment decay", |c| c.train.optimizer.beta2, parse),
    key!("train.eps", "Adam epsilon", |c| c.train.optimizer.eps, parse),
    key!("train.warmup_steps", "linear learning-rate warm-up steps", |c| c.train.optimizer.warmup_steps, parse),
    key!("train.decay_steps", "step at which cosine learning-rate decay reaches zero; 0 disables", |c| c.train.optimizer.decay_steps, parse),
    key!("train.cls_weight", "classification loss weight alpha", |c| c.train.loss.cls, parse),
    key!("train.reg_weight", "regression loss weight beta", |c| c.train.loss.reg, parse),
    key!("train.focal_gamma", "focal loss focusing parameter", |c| c.train.loss.gamma, parse),
    key!("train.focal_alpha", "focal loss positive-class weight", |c| c.train.loss.alpha, parse),
    KeySpec {
        key: "train.center_radius",
        doc: "positives limited to radius*stride around the event centre; none disables",
        get: |c| c.train.assign.center_radius.map_or("none".into(), |r| r.to_string()),
        set: |c, v| {
            c.train.assign.center_radius = if v == "none" { None } else { Some(parse(v)?) };
            Ok(())
        },
    },
    KeySpec {
        key: "train.ranges",
        doc: "per-level regression ranges lo:hi,...; auto derives them from model.levels",
        get: |c| {
            if c.auto_ranges {
                "auto".into()
            } else {
                format_ranges(&c.train.assign.ranges)
            }
        },
        set: |c, v| {
            if let Some(r) = parse_ranges(v)? {
                c.train.assign.ranges = r;
            }
            Ok(())
        },
    },
    key!("train.seed", "model initialization and shuffling seed", |c| c.train.seed, parse),
    key!("nms.score_threshold", "minimum probability decoded into an event", |c| c.decode.score_threshold, parse),
    key!("nms.pre_nms_topk", "events kept per video before suppression", |c| c.decode.pre_nms_topk, parse),
    key!("nms.class_mode", "multi_label or argmax decoding", |c| c.decode.class_mode, parse),
    key!("nms.method", "gaussian, linear or hard", |c| c.nms.method, parse),
    key!("nms.sigma", "gaussian decay width", |c| c.nms.sigma, parse),
    key!("nms.iou_threshold", "overlap above which linear/hard suppression applies", |c| c.nms.iou_threshold, parse),
    key!("nms.score_floor", "events below this score are discarded", |c| c.nms.score_floor, parse),
    key!("nms.max_outputs", "events kept per video after suppression", |c| c.nms.max_outputs, parse),
    key!("eval.interpolation", "all_points or eleven_point AP", |c| c.eval.interpolation, parse),
    key!("eval.bucket_threshold", "tIoU a prediction must exceed for duration-bucket precision", |c| c.eval.bucket_threshold, parse),
    key!("data.train_videos", "videos in the training split", |c| c.data.videos, parse),
    key!("data.test_videos", "videos in the test split", |c| c.test_videos, parse),
    key!("data.mean_events", "mean planted events per video", |c| c.data.mean_events, parse),
    KeySpec {
        key: "data.duration_mix",
        doc: "short,middle,long duration weights",
        get: |c| {
            let [a, b, d] = c.data.duration_mix;
            format!("{a},{b},{d}")
        },
        set: |c, v| {
            let parts: Vec<f64> = v.split(',').map(|x| parse(x.trim())).collect::<std::result::Result<_, _>>()?;
            c.data.duration_mix = parts
                .try_into()
                .map_err(|_| "expected three comma-separated weights".to_string())?;
            Ok(())
        },
    },
    key!("data.distractor_rate", "fraction of planted events present in one stream only", |c| c.data.distractor_rate, parse),
    key!("data.noise", "noise norm per timestep relative to unit signatures", |c| c.data.noise, parse),
    key!("data.min_len_frac", "shortest raw video as a fraction of model.max_len", |c| c.data.length_range.0, parse),
    key!("data.max_len_frac", "longest raw video as a fraction of model.max_len", |c| c.data.length_range.1, parse),
    key!("data.seed", "generator seed", |c| c.data.seed, parse),
    key!("data.seconds_per_timestep", "seconds per timestep for duration buckets", |c| c.data.seconds_per_timestep, parse),
];

/// `key  doc (default: value)` lines for `--help`.
pub fn key_help() -> String {
    let defaults = RunConfig::toy();
    let width = KEYS.iter().map(|k| k.key.len()).max().unwrap_or(0);
    let mut out = String::new();
    for k in KEYS {
        let _ = writeln!(out, "  {:<width$}  {} (toy: {})", k.key, k.doc, (k.get)(&defaults));
    }
    out
}
