//! Dense audio-visual event localization: a small reverse-mode tensor engine,
//! the CCNet model, training, decoding with Soft-NMS, mAP evaluation and a
//! synthetic dataset generator.

pub mod config;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod io;
pub mod kernels;
pub mod layers;
pub mod model;
pub mod param;
pub mod pipeline;
pub mod postprocess;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod types;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use eval::{evaluate, tiou, EvalReport, GroundTruth};
pub use graph::{Graph, Var};
pub use model::{Ccnet, ModelConfig, TimestepPrediction};
pub use param::{ParamId, ParamStore};
pub use postprocess::{decode_predictions, soft_nms, LocalizedEvent, SoftNmsConfig};
pub use tensor::{Scalar, Tensor};
pub use train::{TrainConfig, Trainer};
pub use types::{EventAnnotation, FeatureSequence, Modality, Video};
