//! End-to-end runs over in-memory corpora: pretraining, fine-tuning with
//! convergence curves, dev scoring and the encoder domain probe.

use crate::corpus::{corpus_texts, generate_synthetic, ArticleSummary, Dialogue, SynthCorpora, SynthSpec, Vocab};
use crate::error::{DamsError, Result};
use crate::eval::{corpus_rouge, domain_probe, encode_reps, ConvergencePoint, ProbeReport, RepSet, RougeScore};
use crate::finetune::{dev_metrics, subsample, summarize, DecodeConfig, FinetuneConfig, Finetuner};
use crate::nn::{BlockConfig, DamsModel, ModelConfig};
use crate::pretrain::{encode_pair, EncodedCorpora, EncodedPair, Pretrainer, StepReport, TrainConfig};
use crate::tensor::{AdamConfig, AdamState};

/// Largest vocabulary built from a corpus.
pub const MAX_VOCAB: usize = 8000;

/// Corpora, vocabulary and their encodings, shared by every run on them.
pub struct Workbench {
    pub corpora: SynthCorpora,
    pub vocab: Vocab,
    pub encoded: EncodedCorpora,
    pub finetune: Vec<EncodedPair>,
    pub dev: Vec<EncodedPair>,
}

impl Workbench {
    pub fn synthetic(spec: &SynthSpec) -> Result<Self> {
        Self::new(generate_synthetic(spec))
    }

    pub fn new(corpora: SynthCorpora) -> Result<Self> {
        let pairs: Vec<Dialogue> = corpora.finetune.iter().chain(&corpora.eval).cloned().collect();
        let texts = corpus_texts(&corpora.dialogues, &corpora.shorttexts, &corpora.articles, &pairs);
        let vocab = Vocab::build(texts, MAX_VOCAB)?;
        Ok(Self::with_vocab(corpora, vocab))
    }

    pub fn with_vocab(corpora: SynthCorpora, vocab: Vocab) -> Self {
        let encoded = EncodedCorpora::encode(&vocab, &corpora.dialogues, &corpora.shorttexts, &corpora.articles);
        let finetune = corpora.finetune.iter().map(|d| encode_pair(&vocab, d)).collect();
        let dev = corpora.eval.iter().map(|d| encode_pair(&vocab, d)).collect();
        Workbench { corpora, vocab, encoded, finetune, dev }
    }

    pub fn model_config(&self, block: BlockConfig) -> ModelConfig {
        ModelConfig::new(self.vocab.len(), block)
    }

    pub fn fresh_model(&self, block: BlockConfig, seed: u64) -> Result<DamsModel> {
        DamsModel::new(self.model_config(block), seed)
    }
}

/// Pretrains a fresh model for `config.steps` steps, reporting every step.
pub fn pretrain(
    bench: &Workbench,
    block: BlockConfig,
    config: TrainConfig,
    mut on_step: impl FnMut(&StepReport),
) -> Result<Pretrainer> {
    let model = bench.fresh_model(block, config.seed)?;
    let steps = config.steps;
    let mut run = Pretrainer::new(model, bench.vocab.clone(), bench.encoded.clone(), config)?;
    while run.step_count() < steps {
        on_step(&run.step()?);
    }
    Ok(run)
}

pub struct FinetuneRun {
    pub model: DamsModel,
    pub adam: AdamState,
    /// Dev metrics before training and after every evaluation interval.
    pub curve: Vec<ConvergencePoint>,
    pub train_indices: Vec<usize>,
}

impl FinetuneRun {
    pub fn final_point(&self) -> ConvergencePoint {
        *self.curve.last().expect("curve holds the initial point")
    }
}

/// Fine-tunes on a seeded `fraction` of `train`, evaluating on `dev`.
pub fn finetune(
    model: DamsModel,
    train: &[EncodedPair],
    dev: &[EncodedPair],
    fraction: f64,
    config: FinetuneConfig,
) -> Result<FinetuneRun> {
    let train_indices = subsample(train.len(), fraction, config.seed)?;
    if train_indices.is_empty() && config.steps > 0 {
        return Err(DamsError::Config(format!("train fraction {fraction} selects no pairs")));
    }
    let point = |model: &DamsModel, step: u64, loss: f64| -> Result<ConvergencePoint> {
        let m = dev_metrics(model, dev)?;
        Ok(ConvergencePoint { step, train_loss: loss, dev_ppl: m.perplexity, dev_acc: m.accuracy })
    };
    let mut curve = vec![point(&model, 0, f64::NAN)?];
    if config.steps == 0 {
        let adam = AdamState::new(model.params(), AdamConfig::default());
        return Ok(FinetuneRun { model, adam, curve, train_indices });
    }
    let subset = train_indices.iter().map(|&i| train[i].clone()).collect();
    let (steps, interval) = (config.steps, config.eval_interval);
    let mut run = Finetuner::new(model, subset, config)?;
    let mut window = Vec::new();
    while run.step_count() < steps {
        window.push(run.step()?);
        let s = run.step_count();
        if s % interval == 0 || s == steps {
            let loss = window.iter().sum::<f64>() / window.len() as f64;
            window.clear();
            curve.push(point(&run.model, s, loss)?);
        }
    }
    Ok(FinetuneRun { model: run.model, adam: run.adam, curve, train_indices })
}

/// Beam-search summaries of `dialogues`, in order.
pub fn summarize_all(model: &DamsModel, vocab: &Vocab, dialogues: &[Dialogue], decode: &DecodeConfig) -> Result<Vec<String>> {
    dialogues.iter().map(|d| summarize(model, vocab, d, decode)).collect()
}

/// Corpus ROUGE of generated summaries against the dialogues' references.
pub fn dev_rouge(model: &DamsModel, vocab: &Vocab, dialogues: &[Dialogue], decode: &DecodeConfig) -> Result<RougeScore> {
    let outputs = summarize_all(model, vocab, dialogues, decode)?;
    let pairs: Vec<(String, String)> = outputs
        .into_iter()
        .zip(dialogues)
        .map(|(c, d)| (c, d.summary.clone().unwrap_or_default()))
        .collect();
    corpus_rouge(&pairs)
}

/// Dialogue-encoder [CLS] vectors of dialogue utterances and of article
/// sentences, `per_domain` of each.
pub fn encoder_reps(
    model: &DamsModel,
    vocab: &Vocab,
    dialogues: &[Dialogue],
    articles: &[ArticleSummary],
    per_domain: usize,
) -> Result<(RepSet, RepSet)> {
    let utts: Vec<Vec<usize>> = dialogues
        .iter()
        .flat_map(|d| d.utterances.iter().map(|u| vocab.format_utterance(&u.speaker, &u.text)))
        .take(per_domain)
        .collect();
    let sents: Vec<Vec<usize>> = articles
        .iter()
        .flat_map(|a| a.article_sentences.iter().map(|s| vocab.format_sentence(s)))
        .take(per_domain)
        .collect();
    Ok((
        RepSet::new("dialogue", encode_reps(model, &utts)?),
        RepSet::new("article", encode_reps(model, &sents)?),
    ))
}

/// Linear separability of dialogue vs. article encodings.
pub fn encoder_probe(
    model: &DamsModel,
    vocab: &Vocab,
    dialogues: &[Dialogue],
    articles: &[ArticleSummary],
    per_domain: usize,
    seed: u64,
) -> Result<ProbeReport> {
    let (a, b) = encoder_reps(model, vocab, dialogues, articles, per_domain)?;
    domain_probe(&a, &b, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_block() -> BlockConfig {
        BlockConfig { layers: 1, heads: 2, model_dim: 16, ffn_dim: 32, max_positions: 64, dropout: 0.0 }
    }

    #[test]
    fn short_pipeline_runs() {
        let spec = SynthSpec { dialogues: 20, shorttexts: 20, articles: 20, finetune: 10, eval: 4, seed: 2 };
        let bench = Workbench::synthetic(&spec).unwrap();
        let cfg = TrainConfig { steps: 3, warmup: 2, batch_size: 2, ..Default::default() };
        let mut seen = Vec::new();
        let run = pretrain(&bench, tiny_block(), cfg, |r| seen.push(r.step)).unwrap();
        assert_eq!(seen, [1, 2, 3]);

        let ft = FinetuneConfig { steps: 4, warmup: 2, eval_interval: 3, batch_size: 2, ..Default::default() };
        let out = finetune(run.model, &bench.finetune, &bench.dev, 0.5, ft).unwrap();
        assert_eq!(out.train_indices.len(), 5);
        assert_eq!(out.curve.iter().map(|p| p.step).collect::<Vec<_>>(), [0, 3, 4]);

        let decode = DecodeConfig { beam_size: 2, min_length: 1, max_length: 6, ..Default::default() };
        let r = dev_rouge(&out.model, &bench.vocab, &bench.corpora.eval, &decode).unwrap();
        assert!((0.0..=1.0).contains(&r.rouge_l.f1));
        let (a, b) = encoder_reps(&out.model, &bench.vocab, &bench.corpora.eval, &bench.corpora.articles, 7).unwrap();
        assert_eq!((a.vectors.len(), b.vectors.len()), (7, 7));
    }
}
