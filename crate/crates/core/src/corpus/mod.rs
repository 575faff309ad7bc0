//! Vocabulary, tokenization, record schemas, noising, the mixed pretraining
//! stream and the synthetic corpus generator.

mod noise;
mod records;
mod stream;
pub mod synth;
mod tokenize;
mod vocab;

pub use noise::{add_noise, noise_unit, truncate_pieces, NoiseConfig, NoisedSequence};
pub use records::{
    check_summarized, read_pairs, read_records, write_records, ArticleSummary, Dialogue, Record, TextPiece, Utterance,
    MAX_SENTENCES,
};
pub use stream::{CyclicSampler, MixedStream, Source, StepTriple};
pub use synth::{generate_synthetic, oracle_summary, SynthCorpora, SynthSpec};
pub use tokenize::{detokenize, tokenize, utterance_tokens};
pub use vocab::{Vocab, BOS, CLS, EOS, MASK, MAX_SEQUENCE_TOKENS, NUM_SPECIALS, PAD, SPECIAL_TOKENS, UNK};

/// Every text a vocabulary should cover, in a fixed order.
pub fn corpus_texts<'a>(
    dialogues: &'a [Dialogue],
    shorttexts: &'a [TextPiece],
    articles: &'a [ArticleSummary],
    pairs: &'a [Dialogue],
) -> impl Iterator<Item = String> + 'a {
    let dialogue_texts = |d: &'a Dialogue| {
        d.utterances
            .iter()
            .map(|u| detokenize(&utterance_tokens(&u.speaker, &u.text)))
            .chain(d.summary.clone())
    };
    dialogues
        .iter()
        .flat_map(dialogue_texts)
        .chain(shorttexts.iter().flat_map(|p| p.sentences.iter().cloned()))
        .chain(articles.iter().flat_map(|a| a.article_sentences.iter().cloned().chain(std::iter::once(a.summary.clone()))))
        .chain(pairs.iter().flat_map(dialogue_texts))
}
