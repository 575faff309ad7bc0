//! Fine-tuning the stacked dialogue summarizer and decoding summaries.

mod decode;
mod train;

pub use decode::{beam_search, summarize, BeamHypothesis, DecodeConfig, ModelScorer, StepScorer};
pub use train::{dev_metrics, finetune_step, subsample, DevMetrics, FinetuneConfig, Finetuner, FINETUNE_GROUPS};
