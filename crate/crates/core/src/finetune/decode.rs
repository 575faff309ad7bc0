use std::cmp::Ordering;

use crate::corpus::{Dialogue, Vocab, EOS, NUM_SPECIALS};
use crate::error::{DamsError, Result};
use crate::nn::{DamsModel, Preset};
use crate::pretrain::encode_dialogue;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecodeConfig {
    pub beam_size: usize,
    /// Fewest tokens before [EOS] may be emitted.
    pub min_length: usize,
    /// Most tokens emitted, [EOS] excluded.
    pub max_length: usize,
    /// Finished hypotheses are ranked by `log_prob / len^length_penalty`.
    pub length_penalty: Real,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig { beam_size: 3, min_length: 15, max_length: 60, length_penalty: 0.7 }
    }
}

impl DecodeConfig {
    /// The default 15/60 bounds for the full-size preset; the toy preset's
    /// synthetic summaries are about seven tokens, so its bounds are shorter.
    pub fn for_preset(preset: Preset) -> Self {
        match preset {
            Preset::Paper => DecodeConfig::default(),
            Preset::Toy => DecodeConfig { min_length: 5, max_length: 20, ..DecodeConfig::default() },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(DamsError::Config("beam size must be at least 1".into()));
        }
        if self.min_length >= self.max_length {
            return Err(DamsError::Config(format!(
                "min_length {} must be below max_length {}",
                self.min_length, self.max_length
            )));
        }
        if !(self.length_penalty >= 0.0 && self.length_penalty.is_finite()) {
            return Err(DamsError::Config("length penalty must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeamHypothesis {
    /// Generated ids; a finished hypothesis ends with [EOS].
    pub tokens: Vec<usize>,
    /// Sum of token log-probabilities.
    pub log_prob: Real,
    pub finished: bool,
}

impl BeamHypothesis {
    /// Emitted length, [EOS] excluded.
    pub fn len(&self) -> usize {
        self.tokens.len() - usize::from(self.finished)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The tokens without the trailing [EOS].
    pub fn body(&self) -> &[usize] {
        &self.tokens[..self.len()]
    }

    fn score(&self, penalty: Real) -> Real {
        self.log_prob / (self.tokens.len().max(1) as Real).powf(penalty)
    }
}

/// Next-token log-probabilities for a batch of prefixes.
pub trait StepScorer {
    fn next_logprobs(&self, prefixes: &[Vec<usize>]) -> Result<Vec<Vec<Real>>>;
}

/// The summary decoder over the fixed memory of one dialogue.
pub struct ModelScorer<'a> {
    model: &'a DamsModel,
    memory: Tensor,
}

impl<'a> ModelScorer<'a> {
    pub fn new(model: &'a DamsModel, sentences: &[Vec<usize>]) -> Result<Self> {
        if sentences.is_empty() {
            return Err(DamsError::InvalidBatch("cannot summarize an empty dialogue".into()));
        }
        Ok(ModelScorer { model, memory: model.document_memory(sentences)? })
    }
}

impl StepScorer for ModelScorer<'_> {
    fn next_logprobs(&self, prefixes: &[Vec<usize>]) -> Result<Vec<Vec<Real>>> {
        self.model.next_token_logprobs(&self.memory, prefixes)
    }
}

/// Length-controlled beam search. Specials other than [EOS] are never
/// emitted; [EOS] is blocked until `min_length` tokens exist and forced at
/// `max_length`. Ties are broken towards earlier beams and smaller ids, so
/// the result is deterministic and beam size 1 is greedy decoding.
pub fn beam_search<S: StepScorer + ?Sized>(scorer: &S, cfg: &DecodeConfig) -> Result<BeamHypothesis> {
    cfg.validate()?;
    let mut beams = vec![BeamHypothesis { tokens: Vec::new(), log_prob: 0.0, finished: false }];
    let mut finished: Vec<BeamHypothesis> = Vec::new();
    for len in 0..=cfg.max_length {
        if beams.is_empty() || finished.len() >= cfg.beam_size {
            break;
        }
        let prefixes: Vec<Vec<usize>> = beams.iter().map(|b| b.tokens.clone()).collect();
        let logps = scorer.next_logprobs(&prefixes)?;
        let mut cands: Vec<(Real, usize, usize)> = Vec::new();
        for (bi, (beam, lp)) in beams.iter().zip(&logps).enumerate() {
            for (tok, &p) in lp.iter().enumerate() {
                let allowed = if tok == EOS {
                    len >= cfg.min_length
                } else {
                    tok >= NUM_SPECIALS && len < cfg.max_length
                };
                let total = beam.log_prob + p;
                if allowed && total > Real::NEG_INFINITY && !total.is_nan() {
                    cands.push((total, bi, tok));
                }
            }
        }
        cands.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut next = Vec::with_capacity(cfg.beam_size);
        for (rank, &(lp, bi, tok)) in cands.iter().enumerate() {
            let mut tokens = beams[bi].tokens.clone();
            tokens.push(tok);
            if tok == EOS {
                // a finished hypothesis only counts if it ranks inside the beam
                if rank < cfg.beam_size {
                    finished.push(BeamHypothesis { tokens, log_prob: lp, finished: true });
                }
            } else {
                next.push(BeamHypothesis { tokens, log_prob: lp, finished: false });
            }
            if next.len() == cfg.beam_size {
                break;
            }
        }
        beams = next;
    }
    let best = |hs: Vec<BeamHypothesis>| {
        hs.into_iter().reduce(|a, b| if b.score(cfg.length_penalty) > a.score(cfg.length_penalty) { b } else { a })
    };
    best(finished)
        .or_else(|| best(beams))
        .ok_or_else(|| DamsError::NumericDomain("every continuation has zero probability".into()))
}

/// Beam-searched summary of one dialogue, specials stripped.
pub fn summarize(model: &DamsModel, vocab: &Vocab, dialogue: &Dialogue, cfg: &DecodeConfig) -> Result<String> {
    let scorer = ModelScorer::new(model, &encode_dialogue(vocab, dialogue))?;
    let hyp = beam_search(&scorer, cfg)?;
    Ok(vocab.decode(hyp.body()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{BlockConfig, ModelConfig};
    use crate::corpus::{Utterance, CLS};

    /// Puts all mass on a fixed sequence, then on [EOS].
    struct Scripted(Vec<usize>, usize);

    impl StepScorer for Scripted {
        fn next_logprobs(&self, prefixes: &[Vec<usize>]) -> Result<Vec<Vec<Real>>> {
            Ok(prefixes
                .iter()
                .map(|p| {
                    let want = self.0.get(p.len()).copied().unwrap_or(EOS);
                    (0..self.1).map(|t| if t == want { 0.0 } else { Real::NEG_INFINITY }).collect()
                })
                .collect())
        }
    }

    fn cfg(beam: usize, min: usize, max: usize) -> DecodeConfig {
        DecodeConfig { beam_size: beam, min_length: min, max_length: max, length_penalty: 0.7 }
    }

    #[test]
    fn deterministic_model_is_followed() {
        let (a, b) = (NUM_SPECIALS, NUM_SPECIALS + 1);
        for beam in 1..5 {
            let h = beam_search(&Scripted(vec![a, b], 10), &cfg(beam, 0, 10)).unwrap();
            assert_eq!(h.tokens, vec![a, b, EOS]);
            assert!(h.finished);
            assert_eq!(h.log_prob, 0.0);
        }
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!(beam_search(&Scripted(vec![], 10), &cfg(0, 0, 5)).is_err());
        assert!(beam_search(&Scripted(vec![], 10), &cfg(1, 5, 5)).is_err());
    }

    fn tiny() -> (DamsModel, Vec<Vec<usize>>) {
        let block = BlockConfig { layers: 1, heads: 2, model_dim: 16, ffn_dim: 32, max_positions: 40, dropout: 0.0 };
        let model = DamsModel::new(ModelConfig::new(30, block), 5).unwrap();
        (model, vec![vec![CLS, 7, 8, 9], vec![CLS, 10, 11]])
    }

    fn greedy(scorer: &dyn StepScorer, c: &DecodeConfig) -> Vec<usize> {
        let mut out = Vec::new();
        loop {
            let lp = &scorer.next_logprobs(&[out.clone()]).unwrap()[0];
            let mut best = None;
            for (t, &p) in lp.iter().enumerate() {
                let ok = if t == EOS { out.len() >= c.min_length } else { t >= NUM_SPECIALS && out.len() < c.max_length };
                if ok && best.is_none_or(|(_, bp)| p > bp) {
                    best = Some((t, p));
                }
            }
            let (t, _) = best.unwrap();
            out.push(t);
            if t == EOS {
                return out;
            }
        }
    }

    #[test]
    fn beam_one_is_greedy() {
        let (model, doc) = tiny();
        let scorer = ModelScorer::new(&model, &doc).unwrap();
        for (min, max) in [(0, 6), (3, 8), (5, 6)] {
            let c = cfg(1, min, max);
            assert_eq!(beam_search(&scorer, &c).unwrap().tokens, greedy(&scorer, &c));
        }
    }

    #[test]
    fn lengths_stay_within_bounds() {
        let (model, doc) = tiny();
        let scorer = ModelScorer::new(&model, &doc).unwrap();
        for beam in 1..=4 {
            for (min, max) in [(0, 3), (4, 7), (15, 20)] {
                let h = beam_search(&scorer, &cfg(beam, min, max)).unwrap();
                assert!((min..=max).contains(&h.len()), "beam {beam}: {} not in [{min}, {max}]", h.len());
                assert_eq!(h.finished, h.tokens.last() == Some(&EOS));
            }
        }
    }

    #[test]
    fn summaries_are_clean_and_repeatable() {
        let (model, _) = tiny();
        let mut toks: Vec<String> = crate::corpus::SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        toks.extend((0..23).map(|i| format!("w{i}")));
        toks.push(":".into());
        let vocab = Vocab::from_tokens(toks).unwrap();
        let d = Dialogue { utterances: vec![Utterance::new("w1", "w2 w3"), Utterance::new("w4", "w5")], summary: None };
        let c = cfg(3, 2, 8);
        let s = summarize(&model, &vocab, &d, &c).unwrap();
        assert_eq!(s, summarize(&model, &vocab, &d, &c).unwrap());
        for special in crate::corpus::SPECIAL_TOKENS {
            assert!(!s.contains(special));
        }
        let empty = Dialogue { utterances: vec![], summary: None };
        assert!(summarize(&model, &vocab, &empty, &c).is_err());
    }
}
