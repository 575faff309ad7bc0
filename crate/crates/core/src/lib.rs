pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod finetune;
pub mod nn;
pub mod pretrain;
pub mod rng;
pub mod tensor;

pub use error::{CheckpointError, DamsError, Result};
