//! Transformer blocks and the multi-source model.

mod config;
mod layers;
mod model;

pub use config::{BlockConfig, ModelConfig, Preset};
pub use model::{
    CriticKind, CriticOutput, DamsModel, DecoderOutput, Encoded, HierEncoderKind, Memories, SummaryForward,
    TokenBatch, TokenEncoderKind,
};
