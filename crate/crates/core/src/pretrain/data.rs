use crate::corpus::{
    noise_unit, ArticleSummary, Dialogue, NoiseConfig, Source, StepTriple, TextPiece, Vocab, CLS, MAX_SENTENCES,
    MAX_SEQUENCE_TOKENS,
};
use crate::rng::{self, stream};

/// Longest decoder target: the decoder input is `[BOS] target`.
pub const MAX_TARGET_TOKENS: usize = MAX_SEQUENCE_TOKENS - 1;

/// Token ids of every pretraining record, formatted once up front.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EncodedCorpora {
    /// Per dialogue, `[CLS] speaker : text` per utterance.
    pub dialogues: Vec<Vec<Vec<usize>>>,
    /// Per piece, `[CLS] sentence` per sentence.
    pub pieces: Vec<Vec<Vec<usize>>>,
    pub articles: Vec<EncodedPair>,
}

/// A document as `[CLS]`-prefixed sentences plus its summary ids.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedPair {
    pub sentences: Vec<Vec<usize>>,
    pub summary: Vec<usize>,
}

pub fn encode_dialogue(vocab: &Vocab, d: &Dialogue) -> Vec<Vec<usize>> {
    d.utterances.iter().take(MAX_SENTENCES).map(|u| vocab.format_utterance(&u.speaker, &u.text)).collect()
}

pub fn encode_target(vocab: &Vocab, text: &str) -> Vec<usize> {
    let mut ids = vocab.encode(text);
    ids.truncate(MAX_TARGET_TOKENS);
    ids
}

/// Fine-tune / eval pair. Dialogues without a summary get an empty target.
pub fn encode_pair(vocab: &Vocab, d: &Dialogue) -> EncodedPair {
    EncodedPair {
        sentences: encode_dialogue(vocab, d),
        summary: d.summary.as_deref().map(|s| encode_target(vocab, s)).unwrap_or_default(),
    }
}

impl EncodedCorpora {
    pub fn encode(vocab: &Vocab, dialogues: &[Dialogue], pieces: &[TextPiece], articles: &[ArticleSummary]) -> Self {
        EncodedCorpora {
            dialogues: dialogues.iter().map(|d| encode_dialogue(vocab, d)).collect(),
            pieces: pieces.iter().map(|p| p.sentences.iter().map(|s| vocab.format_sentence(s)).collect()).collect(),
            articles: articles
                .iter()
                .map(|a| EncodedPair {
                    sentences: a.article_sentences.iter().take(MAX_SENTENCES).map(|s| vocab.format_sentence(s)).collect(),
                    summary: encode_target(vocab, &a.summary),
                })
                .collect(),
        }
    }

    pub fn sizes(&self) -> [usize; 3] {
        [self.dialogues.len(), self.pieces.len(), self.articles.len()]
    }
}

/// Noised utterances and their clean targets (no [CLS]), flattened over dialogues.
#[derive(Clone, Debug, PartialEq)]
pub struct RecBatch {
    pub noisy: Vec<Vec<usize>>,
    pub targets: Vec<Vec<usize>>,
}

/// Noised pieces and the clean whole-piece targets.
#[derive(Clone, Debug, PartialEq)]
pub struct GenBatch {
    pub docs: Vec<Vec<Vec<usize>>>,
    pub targets: Vec<Vec<usize>>,
}

/// Clean documents and their summaries.
#[derive(Clone, Debug, PartialEq)]
pub struct SummBatch {
    pub docs: Vec<Vec<Vec<usize>>>,
    pub summaries: Vec<Vec<usize>>,
}

impl SummBatch {
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = &'a EncodedPair>) -> Self {
        let (docs, summaries) = pairs.into_iter().map(|p| (p.sentences.clone(), p.summary.clone())).unzip();
        SummBatch { docs, summaries }
    }
}

/// Everything one pretraining step consumes.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedStep {
    pub step: u64,
    pub rec: RecBatch,
    pub gen: GenBatch,
    pub summ: SummBatch,
}

fn strip_cls(seq: &[usize]) -> &[usize] {
    match seq.first() {
        Some(&CLS) => &seq[1..],
        _ => seq,
    }
}

/// Materializes a step-triple. Noise for each source is drawn from its own
/// stream keyed by `(seed, step, source)`.
pub fn prepare_step(corpora: &EncodedCorpora, triple: &StepTriple, noise: NoiseConfig, seed: u64) -> PreparedStep {
    let noise_rng = |s: Source| rng::derive(seed, &[stream::NOISE, triple.step, s.index() as u64]);

    let mut r = noise_rng(Source::Dialogues);
    let mut rec = RecBatch { noisy: Vec::new(), targets: Vec::new() };
    for &i in triple.batch(Source::Dialogues) {
        for utt in &corpora.dialogues[i] {
            let n = noise_unit(std::slice::from_ref(utt), &mut r, noise).pop().expect("one sequence");
            rec.noisy.push(n.noisy);
            rec.targets.push(strip_cls(&n.clean).to_vec());
        }
    }

    let mut r = noise_rng(Source::ShortTexts);
    let mut gen = GenBatch { docs: Vec::new(), targets: Vec::new() };
    for &i in triple.batch(Source::ShortTexts) {
        let piece = &corpora.pieces[i];
        let noised = noise_unit(piece, &mut r, noise);
        gen.docs.push(noised.into_iter().map(|n| n.noisy).collect());
        let mut target: Vec<usize> = piece.iter().flat_map(|s| strip_cls(s).iter().copied()).collect();
        target.truncate(MAX_TARGET_TOKENS);
        gen.targets.push(target);
    }

    let summ = SummBatch::from_pairs(triple.batch(Source::Articles).iter().map(|&i| &corpora.articles[i]));
    PreparedStep { step: triple.step, rec, gen, summ }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{corpus_texts, generate_synthetic, MixedStream, SynthSpec, MASK};

    #[test]
    fn prepared_batches_line_up() {
        let c = generate_synthetic(&SynthSpec { dialogues: 5, shorttexts: 6, articles: 7, finetune: 1, eval: 1, seed: 2 });
        let vocab = Vocab::build(corpus_texts(&c.dialogues, &c.shorttexts, &c.articles, &c.finetune), 500).unwrap();
        let enc = EncodedCorpora::encode(&vocab, &c.dialogues, &c.shorttexts, &c.articles);
        let mut s = MixedStream::new(enc.sizes(), 2, 3).unwrap();
        let t = s.next().unwrap();
        let p = prepare_step(&enc, &t, NoiseConfig::default(), 3);
        assert_eq!(p, prepare_step(&enc, &t, NoiseConfig::default(), 3));
        assert_eq!(p.rec.noisy.len(), p.rec.targets.len());
        for (n, c) in p.rec.noisy.iter().zip(&p.rec.targets) {
            assert_eq!(n[0], CLS);
            assert_eq!(n.len(), c.len() + 1);
            assert!(!c.contains(&MASK));
        }
        assert_eq!(p.gen.docs.len(), 2);
        assert_eq!(p.summ.docs.len(), 2);
        let first = &enc.pieces[t.batch(Source::ShortTexts)[0]];
        let expected: Vec<usize> = first.iter().flat_map(|s| s[1..].to_vec()).collect();
        assert_eq!(p.gen.targets[0], expected);
    }
}
