//! Encoder building blocks: Mamba variants, self-attention, the waveform
//! frontend, parameter storage and checkpoints.

pub mod attention;
pub mod block;
pub mod checkpoint;
pub mod config;
pub mod encoder;
pub mod frontend;
pub mod layers;
pub mod mamba;
pub mod params;

pub use block::EncoderBlock;
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};
pub use config::{BlockKind, EncoderConfig, SizePreset, SAMPLE_RATE};
pub use encoder::{Encoder, EncoderCache, LayerStates};
pub use params::{Init, ParamSpec, ParamStore};

#[cfg(test)]
mod tests;
