//! Synthetic dense audio-visual event videos.
//!
//! Each class owns one fixed unit signature per modality. A planted event adds
//! its signature over its span; joint events go into both streams and are
//! labeled, distractors go into one stream and are not.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::postprocess::LocalizedEvent;
use crate::tensor::Tensor;
use crate::types::{EventAnnotation, FeatureSequence, Video};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub videos: usize,
    pub max_len: usize,
    pub audio_dim: usize,
    pub visual_dim: usize,
    pub classes: usize,
    /// Mean planted events per video, joint and distractor together.
    pub mean_events: f64,
    /// Probability of drawing a short, middle or long event.
    pub duration_mix: [f64; 3],
    /// Duration ranges in seconds, inclusive.
    pub duration_ranges: [(f64, f64); 3],
    /// Fraction of planted events that appear in one stream only.
    pub distractor_rate: f64,
    /// Expected noise norm per timestep relative to a unit signature.
    pub noise: f64,
    /// Raw length before pad/crop, as fractions of `max_len`.
    pub length_range: (f64, f64),
    pub seed: u64,
    pub seconds_per_timestep: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            videos: 300,
            max_len: 64,
            audio_dim: 128,
            visual_dim: 256,
            classes: 5,
            mean_events: 2.8,
            duration_mix: [0.5, 0.35, 0.15],
            duration_ranges: [(1.0, 5.0), (6.0, 20.0), (21.0, 60.0)],
            distractor_rate: 0.3,
            noise: 1.0,
            length_range: (0.5, 1.25),
            seed: 0,
            seconds_per_timestep: 1.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("data.max_len", self.max_len),
            ("data.audio_dim", self.audio_dim),
            ("data.visual_dim", self.visual_dim),
            ("data.classes", self.classes),
        ] {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if !(self.mean_events >= 0.0 && self.mean_events.is_finite()) {
            return Err(Error::config("data.mean_events", "must be a non-negative number"));
        }
        if !(0.0..=1.0).contains(&self.distractor_rate) {
            return Err(Error::config("data.distractor_rate", "must lie in [0, 1]"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::config("data.noise", "must be a non-negative number"));
        }
        let mix: f64 = self.duration_mix.iter().sum();
        if self.duration_mix.iter().any(|&w| w < 0.0) || mix <= 0.0 {
            return Err(Error::config("data.duration_mix", "weights must be non-negative with a positive sum"));
        }
        if self.duration_ranges.iter().any(|&(lo, hi)| !(lo > 0.0 && hi >= lo)) {
            return Err(Error::config("data.duration_ranges", "each range needs 0 < lo <= hi"));
        }
        let (lo, hi) = self.length_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::config("data.length_range", "need 0 < lo <= hi"));
        }
        if !(self.seconds_per_timestep > 0.0) {
            return Err(Error::config("data.seconds_per_timestep", "must be positive"));
        }
        Ok(())
    }
}

/// Per-class unit signatures for both modalities.
#[derive(Clone, Debug, PartialEq)]
pub struct Signatures {
    /// `[C × d_a]`, unit rows.
    pub audio: Tensor<f32>,
    /// `[C × d_v]`, unit rows.
    pub visual: Tensor<f32>,
}

impl Signatures {
    pub fn generate(cfg: &SynthConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, u64::MAX, 0));
        Self {
            audio: unit_rows(&mut rng, cfg.classes, cfg.audio_dim),
            visual: unit_rows(&mut rng, cfg.classes, cfg.visual_dim),
        }
    }
}

fn unit_rows(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Tensor<f32> {
    let normal = Normal::new(0.0f64, 1.0).expect("unit normal");
    let mut data = Vec::with_capacity(rows * dim);
    for _ in 0..rows {
        let v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        data.extend(v.iter().map(|x| (x / norm) as f32));
    }
    Tensor::new(vec![rows, dim], data).expect("signature shape")
}

/// splitmix64 over `(seed, stream, index)`.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Streams {
    Both,
    AudioOnly,
    VisualOnly,
}

/// One event planted into the raw (uncropped) streams, `[t_start, t_end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Planting {
    pub t_start: usize,
    pub t_end: usize,
    pub class_id: usize,
    pub streams: Streams,
}

/// Raw video before padding or cropping.
#[derive(Clone, Debug, PartialEq)]
pub struct RawVideo {
    pub audio: Tensor<f32>,
    pub visual: Tensor<f32>,
    pub plantings: Vec<Planting>,
}

impl RawVideo {
    /// Labels are the joint plantings only.
    pub fn annotations(&self) -> Vec<EventAnnotation> {
        let mut out: Vec<EventAnnotation> = self
            .plantings
            .iter()
            .filter(|p| p.streams == Streams::Both)
            .map(|p| EventAnnotation::new(p.t_start as f64, p.t_end as f64, p.class_id))
            .collect();
        out.sort_by(|a, b| a.t_start.total_cmp(&b.t_start).then(a.class_id.cmp(&b.class_id)));
        out
    }
}

/// Adds signatures for `plantings` and Gaussian noise of std `noise / sqrt(d)`.
pub fn render(
    sig: &Signatures,
    len: usize,
    plantings: &[Planting],
    noise: f64,
    rng: &mut ChaCha8Rng,
) -> RawVideo {
    let stream = |table: &Tensor<f32>, rng: &mut ChaCha8Rng, wanted: fn(Streams) -> bool| {
        let dim = table.dims2().1;
        let mut x = Tensor::<f32>::zeros(&[len.max(1), dim]);
        if noise > 0.0 {
            let normal = Normal::new(0.0, noise / (dim as f64).sqrt()).expect("finite noise");
            for v in x.data_mut().iter_mut().take(len * dim) {
                *v = normal.sample(rng) as f32;
            }
        }
        for p in plantings.iter().filter(|p| wanted(p.streams)) {
            let s = table.row(p.class_id);
            for t in p.t_start..p.t_end.min(len) {
                for (dst, src) in x.data_mut()[t * dim..(t + 1) * dim].iter_mut().zip(s) {
                    *dst += *src;
                }
            }
        }
        x
    };
    let audio = stream(&sig.audio, rng, |s| s != Streams::VisualOnly);
    let visual = stream(&sig.visual, rng, |s| s != Streams::AudioOnly);
    RawVideo {
        audio,
        visual,
        plantings: plantings.to_vec(),
    }
}

/// Draws plantings for a raw video of `len` timesteps. Same-class overlaps
/// are re-drawn a few times and dropped if no free slot is found.
pub fn draw_plantings(cfg: &SynthConfig, len: usize, rng: &mut ChaCha8Rng) -> Vec<Planting> {
    let count = if cfg.mean_events > 0.0 {
        Poisson::new(cfg.mean_events).expect("positive mean").sample(rng) as usize
    } else {
        0
    };
    let total: f64 = cfg.duration_mix.iter().sum();
    let mut out: Vec<Planting> = Vec::with_capacity(count);
    for _ in 0..count {
        let class_id = rng.random_range(0..cfg.classes);
        let streams = if rng.random::<f64>() < cfg.distractor_rate {
            if rng.random::<bool>() {
                Streams::AudioOnly
            } else {
                Streams::VisualOnly
            }
        } else {
            Streams::Both
        };
        for _attempt in 0..8 {
            let pick = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut bucket = cfg.duration_mix.len() - 1;
            for (b, w) in cfg.duration_mix.iter().enumerate() {
                acc += w;
                if pick < acc {
                    bucket = b;
                    break;
                }
            }
            let (lo, hi) = cfg.duration_ranges[bucket];
            let lo = (lo / cfg.seconds_per_timestep).round().max(1.0) as usize;
            let hi = ((hi / cfg.seconds_per_timestep).round() as usize).max(lo);
            let duration = rng.random_range(lo..=hi).min(len.max(1));
            let start = rng.random_range(0..=len.saturating_sub(duration));
            let candidate = Planting {
                t_start: start,
                t_end: start + duration,
                class_id,
                streams,
            };
            let clash = out.iter().any(|p| {
                p.class_id == class_id && p.t_start < candidate.t_end && candidate.t_start < p.t_end
            });
            if !clash {
                out.push(candidate);
                break;
            }
        }
    }
    out
}

/// Zero-pads or truncates to `max_len`, recording the valid length.
pub fn pad_crop(seq: &Tensor<f32>, valid: usize, max_len: usize) -> FeatureSequence<f32> {
    let dim = seq.dims2().1;
    let keep = valid.min(max_len);
    let mut data = vec![0.0f32; max_len * dim];
    data[..keep * dim].copy_from_slice(&seq.data()[..keep * dim]);
    FeatureSequence::new(Tensor::new(vec![max_len, dim], data).expect("padded shape"), keep)
}

/// Clips annotations to `[0, limit)` and drops those starting at or past `limit`.
pub fn clip_annotations(events: &[EventAnnotation], limit: usize) -> Vec<EventAnnotation> {
    let limit = limit as f64;
    events
        .iter()
        .filter(|e| e.t_start < limit)
        .map(|e| EventAnnotation::new(e.t_start, e.t_end.min(limit), e.class_id))
        .collect()
}

/// Generates video `index` of the split `split`.
pub fn generate_video(cfg: &SynthConfig, sig: &Signatures, split: u64, index: usize) -> Video {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, split, index as u64));
    let (lo, hi) = cfg.length_range;
    let lo = ((lo * cfg.max_len as f64).round() as usize).max(1);
    let hi = ((hi * cfg.max_len as f64).round() as usize).max(lo);
    let len = rng.random_range(lo..=hi);
    let plantings = draw_plantings(cfg, len, &mut rng);
    let raw = render(sig, len, &plantings, cfg.noise, &mut rng);
    let events = clip_annotations(&raw.annotations(), len.min(cfg.max_len));
    Video {
        id: format!("{}_{index:05}", split_name(split)),
        audio: pad_crop(&raw.audio, len, cfg.max_len),
        visual: pad_crop(&raw.visual, len, cfg.max_len),
        events,
        seconds_per_timestep: cfg.seconds_per_timestep,
    }
}

pub const SPLIT_TRAIN: u64 = 0;
pub const SPLIT_TEST: u64 = 1;

pub fn split_name(split: u64) -> String {
    match split {
        SPLIT_TRAIN => "train".into(),
        SPLIT_TEST => "test".into(),
        other => format!("split{other}"),
    }
}

/// `cfg.videos` videos of one split, generated in parallel on the current rayon pool.
pub fn generate_split(cfg: &SynthConfig, split: u64) -> Result<Vec<Video>> {
    cfg.validate()?;
    let sig = Signatures::generate(cfg);
    Ok((0..cfg.videos)
        .into_par_iter()
        .map(|i| generate_video(cfg, &sig, split, i))
        .collect())
}

/// Labeled-event counts per duration bucket, plus events outside every bucket.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetStats {
    pub videos: usize,
    pub events: usize,
    pub buckets: [usize; 3],
    pub other: usize,
}

impl DatasetStats {
    pub fn of(videos: &[Video]) -> Self {
        let mut s = DatasetStats {
            videos: videos.len(),
            ..Default::default()
        };
        for v in videos {
            for e in &v.events {
                s.events += 1;
                let secs = e.duration() * v.seconds_per_timestep;
                match crate::eval::DURATION_BUCKETS
                    .iter()
                    .position(|&(lo, hi)| secs > lo && secs <= hi)
                {
                    Some(b) => s.buckets[b] += 1,
                    None => s.other += 1,
                }
            }
        }
        s
    }
}

/// Analytic detector that knows the signatures: per class, the score at `t` is
/// the smaller of the two streams' projections onto that class's signatures.
/// Runs above `threshold` become events scored by their mean projection.
pub fn projection_oracle(video: &Video, sig: &Signatures, threshold: f64) -> Vec<LocalizedEvent> {
    let valid = video.valid_len();
    let classes = sig.audio.dims2().0;
    let project = |x: &Tensor<f32>, s: &[f32], t: usize| -> f64 {
        x.row(t).iter().zip(s).map(|(a, b)| f64::from(*a) * f64::from(*b)).sum()
    };
    let mut out = Vec::new();
    for c in 0..classes {
        let scores: Vec<f64> = (0..valid)
            .map(|t| {
                let a = project(&video.audio.values, sig.audio.row(c), t);
                let v = project(&video.visual.values, sig.visual.row(c), t);
                a.min(v)
            })
            .collect();
        let mut t = 0;
        while t < valid {
            if scores[t] < threshold {
                t += 1;
                continue;
            }
            let start = t;
            while t < valid && scores[t] >= threshold {
                t += 1;
            }
            let mean = scores[start..t].iter().sum::<f64>() / (t - start) as f64;
            out.push(LocalizedEvent::new(start as f64, t as f64, c, mean.clamp(1e-6, 1.0)));
        }
    }
    out
}
