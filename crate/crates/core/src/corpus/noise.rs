use rand::Rng;

use super::vocab::{CLS, MASK};
use super::records::TextPiece;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseConfig {
    /// Probability that a whole unit (utterance or piece) is left untouched.
    pub unit_keep_prob: f64,
    /// Per-token masking probability inside a noised unit.
    pub mask_rate: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { unit_keep_prob: 0.20, mask_rate: 0.15 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NoisedSequence {
    pub noisy: Vec<usize>,
    pub clean: Vec<usize>,
    pub mask_positions: Vec<usize>,
    pub untouched: bool,
}

/// Noises one unit. A leading [CLS] is never masked.
pub fn add_noise<R: Rng + ?Sized>(seq: &[usize], rng: &mut R, cfg: NoiseConfig) -> NoisedSequence {
    noise_unit(std::slice::from_ref(&seq.to_vec()), rng, cfg).pop().expect("one sequence")
}

/// Noises a unit made of several sequences (the sentences of a piece) with a
/// single keep-unchanged draw for the whole unit.
pub fn noise_unit<R: Rng + ?Sized>(seqs: &[Vec<usize>], rng: &mut R, cfg: NoiseConfig) -> Vec<NoisedSequence> {
    let untouched = rng.random::<f64>() < cfg.unit_keep_prob;
    seqs.iter()
        .map(|seq| {
            let mut noisy = seq.clone();
            let mut mask_positions = Vec::new();
            if !untouched {
                for (i, t) in noisy.iter_mut().enumerate() {
                    if i == 0 && *t == CLS {
                        continue;
                    }
                    if rng.random::<f64>() < cfg.mask_rate {
                        *t = MASK;
                        mask_positions.push(i);
                    }
                }
            }
            NoisedSequence { noisy, clean: seq.clone(), mask_positions, untouched }
        })
        .collect()
}

/// Splits a document into consecutive pieces of one or two sentences, each
/// size drawn uniformly (the last piece takes whatever is left).
pub fn truncate_pieces<R: Rng + ?Sized>(sentences: &[String], rng: &mut R) -> Vec<TextPiece> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < sentences.len() {
        let want = if rng.random::<bool>() { 2 } else { 1 };
        let end = (i + want).min(sentences.len());
        out.push(TextPiece { sentences: sentences[i..end].to_vec() });
        i = end;
    }
    out
}
