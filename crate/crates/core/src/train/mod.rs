//! Target assignment, the training objective, the optimizer and the epoch loop.

pub mod adam;
pub mod loss;
pub mod targets;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::model::Ccnet;
use crate::tensor::Scalar;
use crate::types::Video;

pub use adam::{Adam, AdamConfig};
pub use loss::{focal_loss, giou_loss_1d, total_loss, LossBreakdown, LossWeights};
pub use targets::{assign_targets, default_ranges, AssignParams, TargetAssignment};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub loss: LossWeights,
    pub assign: AssignParams,
    pub seed: u64,
}

impl TrainConfig {
    pub fn full(levels: usize) -> Self {
        Self {
            epochs: 40,
            batch_size: 16,
            optimizer: AdamConfig::default(),
            loss: LossWeights::default(),
            assign: AssignParams::for_levels(levels),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        if !(self.optimizer.lr > 0.0) {
            return Err(Error::config("train.lr", "must be positive"));
        }
        self.loss.validate()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub batches: usize,
    pub seconds: f64,
}

impl EpochMetrics {
    /// Tab-separated log line: epoch, total, cls, reg, seconds.
    pub fn log_line(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.3}",
            self.epoch, self.loss.total, self.loss.cls, self.loss.reg, self.seconds
        )
    }
}

/// Builds the loss graph of one video.
pub fn video_loss<T: Scalar>(
    model: &Ccnet<T>,
    g: &mut Graph<T>,
    video: &Video,
    cfg: &TrainConfig,
) -> Result<(Var, LossBreakdown)> {
    let targets = assign_targets(&video.events, &model.config, &cfg.assign, video.valid_len())?;
    let out = model.forward(g, &video.audio.cast(), &video.visual.cast())?;
    total_loss(g, &out, &targets, &cfg.loss)
}

/// Mean loss of a batch, each video's loss scaled by `1 / batch`, as one graph.
pub fn batch_loss<T: Scalar>(
    model: &Ccnet<T>,
    g: &mut Graph<T>,
    videos: &[&Video],
    cfg: &TrainConfig,
) -> Result<Var> {
    let scale = T::of(1.0 / videos.len() as f64);
    let mut acc: Option<Var> = None;
    for v in videos {
        let (l, _) = video_loss(model, g, v, cfg)?;
        let l = g.scale(l, scale);
        acc = Some(match acc {
            Some(a) => g.add(a, l)?,
            None => l,
        });
    }
    acc.ok_or_else(|| Error::Contract("empty batch".into()))
}

/// Epoch visiting order, a pure function of the seed and epoch index.
pub fn epoch_order(len: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    order.shuffle(&mut rng);
    order
}

/// Splits `order` into batches of at most `batch_size` videos.
pub fn batches<'a>(data: &'a [Video], order: &[usize], batch_size: usize) -> Vec<Vec<&'a Video>> {
    order
        .chunks(batch_size.clamp(1, data.len().max(1)))
        .map(|chunk| chunk.iter().map(|&i| &data[i]).collect())
        .collect()
}

/// Model plus optimizer state.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    pub model: Ccnet<T>,
    pub optimizer: Adam<T>,
    pub config: TrainConfig,
    /// Epochs completed so far.
    pub epoch: usize,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: Ccnet<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = Adam::new(config.optimizer.clone(), &model.params);
        Ok(Self {
            model,
            optimizer,
            config,
            epoch: 0,
        })
    }

    /// One optimizer step over `batch`; gradients are accumulated video by video.
    pub fn step(&mut self, batch: &[&Video]) -> Result<LossBreakdown> {
        self.model.params.zero_grad();
        let scale = T::of(1.0 / batch.len() as f64);
        let mut mean = LossBreakdown::default();
        for video in batch {
            let mut g = Graph::new();
            let (loss, parts) = video_loss(&self.model, &mut g, video, &self.config)?;
            let scaled = g.scale(loss, scale);
            g.backward(scaled, &mut self.model.params)?;
            mean.total += parts.total;
            mean.cls += parts.cls;
            mean.reg += parts.reg;
            mean.positives += parts.positives;
        }
        self.optimizer.update(&mut self.model.params)?;
        let n = batch.len() as f64;
        mean.total /= n;
        mean.cls /= n;
        mean.reg /= n;
        Ok(mean)
    }

    pub fn train_epoch(&mut self, data: &[Video]) -> Result<EpochMetrics> {
        if data.is_empty() {
            return Err(Error::Contract("training set is empty".into()));
        }
        let start = Instant::now();
        let order = epoch_order(data.len(), self.config.seed, self.epoch);
        let mut sum = LossBreakdown::default();
        let mut count = 0;
        for batch in batches(data, &order, self.config.batch_size) {
            let b = self.step(&batch)?;
            let w = batch.len() as f64;
            sum.total += b.total * w;
            sum.cls += b.cls * w;
            sum.reg += b.reg * w;
            sum.positives += b.positives;
            count += 1;
        }
        let n = data.len() as f64;
        self.epoch += 1;
        Ok(EpochMetrics {
            epoch: self.epoch,
            loss: LossBreakdown {
                total: sum.total / n,
                cls: sum.cls / n,
                reg: sum.reg / n,
                positives: sum.positives,
            },
            batches: count,
            seconds: start.elapsed().as_secs_f64(),
        })
    }

    /// Mean loss over `data` without updating parameters.
    pub fn evaluate_loss(&self, data: &[Video]) -> Result<LossBreakdown> {
        let mut sum = LossBreakdown::default();
        for v in data {
            let mut g = Graph::new();
            let (_, parts) = video_loss(&self.model, &mut g, v, &self.config)?;
            sum.total += parts.total;
            sum.cls += parts.cls;
            sum.reg += parts.reg;
            sum.positives += parts.positives;
        }
        let n = data.len().max(1) as f64;
        sum.total /= n;
        sum.cls /= n;
        sum.reg /= n;
        Ok(sum)
    }
}
