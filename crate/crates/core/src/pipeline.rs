//! Inference and scoring glue shared by the CLI, tests and benchmarks.

use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::Result;
use crate::eval::{evaluate, EvalReport, GroundTruth};
use crate::model::Ccnet;
use crate::postprocess::{decode_predictions, soft_nms, DecodeConfig, LocalizedEvent, SoftNmsConfig};
use crate::tensor::Scalar;
use crate::types::Video;

/// Forward pass, decoding and Soft-NMS for one video.
pub fn localize<T: Scalar>(
    model: &Ccnet<T>,
    video: &Video,
    decode: &DecodeConfig,
    nms: &SoftNmsConfig,
) -> Result<Vec<LocalizedEvent>> {
    let (preds, _) = model.predict(&video.audio.cast(), &video.visual.cast())?;
    let events = decode_predictions(&preds, video.valid_len(), decode);
    Ok(soft_nms(&events, nms))
}

/// [`localize`] over many videos, in parallel on the current rayon pool.
pub fn localize_all<T: Scalar>(
    model: &Ccnet<T>,
    videos: &[Video],
    decode: &DecodeConfig,
    nms: &SoftNmsConfig,
) -> Result<Vec<Vec<LocalizedEvent>>> {
    videos
        .par_iter()
        .map(|v| localize(model, v, decode, nms))
        .collect()
}

pub fn ground_truth(videos: &[Video]) -> Vec<GroundTruth> {
    videos
        .iter()
        .map(|v| GroundTruth {
            video_id: v.id.clone(),
            events: v.events.clone(),
            seconds_per_timestep: v.seconds_per_timestep,
        })
        .collect()
}

/// Localizes `videos` with `model` and scores the result.
pub fn evaluate_model<T: Scalar>(
    model: &Ccnet<T>,
    videos: &[Video],
    cfg: &RunConfig,
) -> Result<(EvalReport, Vec<Vec<LocalizedEvent>>)> {
    let preds = localize_all(model, videos, &cfg.decode, &cfg.nms)?;
    let report = evaluate(&preds, &ground_truth(videos), model.config.classes, &cfg.eval)?;
    Ok((report, preds))
}

/// Tab-separated prediction lines: id, start, end, class, score.
pub fn format_predictions(videos: &[Video], preds: &[Vec<LocalizedEvent>]) -> String {
    let mut out = String::new();
    for (v, events) in videos.iter().zip(preds) {
        for e in events {
            out.push_str(&format!(
                "{}\t{:.6}\t{:.6}\t{}\t{:.6}\n",
                v.id, e.t_start, e.t_end, e.class_id, e.score
            ));
        }
    }
    out
}
