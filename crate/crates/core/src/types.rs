//! Data types shared between the generator, the model and the trainer.

use crate::tensor::{Scalar, Tensor};

/// One modality's per-timestep features for one video.
///
/// Rows at index `>= valid_len` are zero padding.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence<T> {
    pub values: Tensor<T>,
    pub valid_len: usize,
}

impl<T: Scalar> FeatureSequence<T> {
    pub fn new(values: Tensor<T>, valid_len: usize) -> Self {
        Self { values, valid_len }
    }

    /// A fully valid sequence.
    pub fn dense(values: Tensor<T>) -> Self {
        let valid_len = values.dims2().0;
        Self { values, valid_len }
    }

    pub fn len(&self) -> usize {
        self.values.dims2().0
    }

    pub fn is_empty(&self) -> bool {
        self.valid_len == 0
    }

    pub fn dim(&self) -> usize {
        self.values.dims2().1
    }

    pub fn cast<U: Scalar>(&self) -> FeatureSequence<U> {
        FeatureSequence {
            values: self.values.cast(),
            valid_len: self.valid_len,
        }
    }
}

/// A ground-truth audio-visual event `[t_start, t_end)` in timestep units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EventAnnotation {
    pub t_start: f64,
    pub t_end: f64,
    pub class_id: usize,
}

impl EventAnnotation {
    pub fn new(t_start: f64, t_end: f64, class_id: usize) -> Self {
        Self {
            t_start,
            t_end,
            class_id,
        }
    }

    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.t_start + self.t_end)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Modality {
    Audio,
    Visual,
}

/// One video: padded features for both modalities and its labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Video {
    pub id: String,
    pub audio: FeatureSequence<f32>,
    pub visual: FeatureSequence<f32>,
    pub events: Vec<EventAnnotation>,
    pub seconds_per_timestep: f64,
}

impl Video {
    pub fn valid_len(&self) -> usize {
        self.audio.valid_len.min(self.visual.valid_len)
    }
}
