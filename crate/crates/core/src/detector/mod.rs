//! Query-based monocular 3D detector with optional intrinsic conditioning.

pub mod checkpoint;
pub mod config;
pub mod loss;
pub mod matching;
pub mod model;
pub mod train;

pub use checkpoint::{encode_checkpoint, read_checkpoint, write_checkpoint};
pub use config::{Ablation, ConnectorKind, DetectorConfig, IntrinsicSource, LossWeights, MatchCosts};
pub use loss::{ImageTargets, LossTerms, PredView, Target};
pub use matching::hungarian;
pub use model::{BatchOutputs, Conditioning, DetectorState, ForwardOut, ForwardTrace};
pub use train::{
    batch_objective, predict, predict_batch, targets_for, train, Detection, DetectionSet, StepMetrics, TrainConfig,
    FocalSample, TrainReport, METRICS_HEADER,
};

#[cfg(test)]
mod tests;
