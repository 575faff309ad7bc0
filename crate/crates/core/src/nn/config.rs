use crate::error::{DamsError, Result};
use crate::tensor::Real;

/// Shape of one transformer stack. Every stack of a model shares it.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ffn_dim: usize,
    /// Longest token sequence, [CLS] / [BOS] included.
    pub max_positions: usize,
    pub dropout: Real,
}

impl BlockConfig {
    pub fn toy() -> Self {
        BlockConfig { layers: 2, heads: 4, model_dim: 64, ffn_dim: 256, max_positions: 64, dropout: 0.1 }
    }

    pub fn paper() -> Self {
        BlockConfig { layers: 6, heads: 8, model_dim: 768, ffn_dim: 2048, max_positions: 64, dropout: 0.1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.model_dim == 0 || self.ffn_dim == 0 || self.max_positions == 0 {
            return Err(DamsError::Config(format!("block dimensions must be positive: {self:?}")));
        }
        if self.model_dim % self.heads != 0 {
            return Err(DamsError::Config(format!(
                "model_dim {} is not divisible by heads {}",
                self.model_dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(DamsError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Toy,
    Paper,
}

impl Preset {
    pub fn block(self) -> BlockConfig {
        match self {
            Preset::Toy => BlockConfig::toy(),
            Preset::Paper => BlockConfig::paper(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Toy => "toy",
            Preset::Paper => "paper",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(Preset::Toy),
            "paper" => Ok(Preset::Paper),
            other => Err(DamsError::Config(format!("unknown preset {other:?} (expected toy or paper)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub block: BlockConfig,
    /// Longest sentence sequence a hierarchical encoder accepts.
    pub max_sentences: usize,
    /// Std of every normally initialized weight; defaults to `1/sqrt(d)`.
    pub init_std: Real,
}

impl ModelConfig {
    pub fn new(vocab_size: usize, block: BlockConfig) -> Self {
        let init_std = 1.0 / (block.model_dim as Real).sqrt();
        ModelConfig { vocab_size, block, max_sentences: 24, init_std }
    }

    pub fn validate(&self) -> Result<()> {
        self.block.validate()?;
        if self.vocab_size <= crate::corpus::NUM_SPECIALS {
            return Err(DamsError::Config(format!("vocabulary of {} is too small", self.vocab_size)));
        }
        if self.max_sentences == 0 {
            return Err(DamsError::Config("max_sentences must be positive".into()));
        }
        Ok(())
    }

    pub fn critic_hidden(&self) -> usize {
        2 * self.block.model_dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        BlockConfig::toy().validate().unwrap();
        BlockConfig::paper().validate().unwrap();
        let mut bad = BlockConfig::toy();
        bad.heads = 5;
        assert!(matches!(bad.validate(), Err(DamsError::Config(_))));
        bad.heads = 0;
        assert!(bad.validate().is_err());
    }
}
