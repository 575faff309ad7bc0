//! Multi-source pretraining: the three task losses, the two adversarial
//! critic losses, the combined step and checkpoints.

mod checkpoint;
mod data;
mod losses;
mod step;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, TrainingState, FORMAT_VERSION, MAGIC,
};
pub use data::{
    encode_dialogue, encode_pair, encode_target, prepare_step, EncodedCorpora, EncodedPair, GenBatch, PreparedStep,
    RecBatch, SummBatch, MAX_TARGET_TOKENS,
};
pub use losses::{critic_losses, gen_loss, rec_loss, summ_loss, CriticTerms};
pub use step::{pretrain_gradients, pretrain_step, LossBreakdown, Pretrainer, SourceSet, StepReport, TrainConfig};
