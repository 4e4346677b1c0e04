//! Masked-prediction pretraining: MFCC targets, span masking, the
//! prediction loss, optimizer and loss scaling, and the two-iteration
//! pipeline.

pub mod loss;
pub mod mask;
pub mod mfcc;
pub mod optim;
pub mod pipeline;
pub mod trainer;

pub use loss::{LossOutput, PredictionHead};
pub use mask::{apply_mask, sample_mask, MaskSpec};
pub use mfcc::{compute_mfcc, MfccExtractor, MFCC_DIM};
pub use optim::{Adam, LossScaleState, TrainSchedule};
pub use pipeline::{generate_targets, pretrain_pipeline, IterationResult, PretrainConfig};
pub use trainer::{ema, Batcher, Pretrainer, StepMetrics, TrainItem};

#[cfg(test)]
mod tests;
