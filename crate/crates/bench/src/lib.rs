//! Shared fixtures for the benchmarks.

use ccnet_core::config::RunConfig;
use ccnet_core::eval::GroundTruth;
use ccnet_core::postprocess::LocalizedEvent;
use ccnet_core::synth::{generate_split, SPLIT_TRAIN};
use ccnet_core::{EventAnnotation, Tensor, Video};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f32> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Toy profile with `videos` training videos.
pub fn toy(videos: usize) -> (RunConfig, Vec<Video>) {
    let mut cfg = RunConfig::toy();
    cfg.data.videos = videos;
    let data = generate_split(&cfg.data, SPLIT_TRAIN).expect("toy data");
    (cfg, data)
}

pub fn random_events(rng: &mut ChaCha8Rng, n: usize, classes: usize, len: f64) -> Vec<LocalizedEvent> {
    (0..n)
        .map(|_| {
            let s = rng.random_range(0.0..len - 1.0);
            let e = rng.random_range(s + 0.5..len);
            LocalizedEvent::new(s, e, rng.random_range(0..classes), rng.random_range(0.01..1.0))
        })
        .collect()
}

/// Predictions and ground truth for `videos` videos of `len` timesteps.
pub fn scoring_instance(
    rng: &mut ChaCha8Rng,
    videos: usize,
    classes: usize,
    len: f64,
) -> (Vec<Vec<LocalizedEvent>>, Vec<GroundTruth>) {
    let mut preds = Vec::with_capacity(videos);
    let mut gts = Vec::with_capacity(videos);
    for i in 0..videos {
        preds.push(random_events(rng, 100, classes, len));
        let events = random_events(rng, 4, classes, len)
            .into_iter()
            .map(|e| EventAnnotation::new(e.t_start, e.t_end, e.class_id))
            .collect();
        gts.push(GroundTruth {
            video_id: format!("v{i}"),
            events,
            seconds_per_timestep: 1.0,
        });
    }
    (preds, gts)
}
