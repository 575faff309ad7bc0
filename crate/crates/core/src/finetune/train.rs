use rand::seq::SliceRandom;

use crate::corpus::{CyclicSampler, EOS};
use crate::error::{DamsError, Result};
use crate::nn::DamsModel;
use crate::pretrain::{EncodedPair, SummBatch};
use crate::rng::{self, stream};
use crate::tensor::{clip_grad_norm, kernels, AdamConfig, AdamState, Group, LrSchedule, Real};

/// The stacked summarizer; everything else stays frozen during fine-tuning.
pub const FINETUNE_GROUPS: [Group; 4] = [Group::Embedding, Group::DialogueEncoder, Group::BridgeHier, Group::SummaryDecoder];

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneConfig {
    pub steps: u64,
    pub warmup: u64,
    pub batch_size: usize,
    pub lr: Real,
    pub seed: u64,
    /// Dev metrics are computed every this many steps.
    pub eval_interval: u64,
    pub clip_norm: Real,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig { steps: 1000, warmup: 100, batch_size: 4, lr: 1e-3, seed: 1, eval_interval: 50, clip_norm: 1.0 }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup == 0 || self.batch_size == 0 || self.eval_interval == 0 {
            return Err(DamsError::Config("warmup, batch size and eval interval must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.clip_norm > 0.0) {
            return Err(DamsError::Config("learning rate and clip norm must be positive".into()));
        }
        Ok(())
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule::uniform(&FINETUNE_GROUPS, self.lr, self.warmup)
    }
}

/// Seeded subset of `0..n` holding `round(fraction * n)` indices, sorted.
pub fn subsample(n: usize, fraction: Real, seed: u64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(DamsError::Config(format!("train fraction {fraction} outside [0, 1]")));
    }
    let k = (fraction * n as Real).round() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::derive(seed, &[stream::SUBSAMPLE]));
    idx.truncate(k);
    idx.sort_unstable();
    Ok(idx)
}

/// One teacher-forced step on clean dialogues. Only the stacked groups are
/// scheduled, so the optimizer never touches the others.
pub fn finetune_step(
    model: &mut DamsModel,
    adam: &mut AdamState,
    schedule: &LrSchedule,
    batch: &SummBatch,
    cfg: &FinetuneConfig,
) -> Result<Real> {
    let step = adam.step;
    let mut dropout = rng::derive(cfg.seed, &[stream::FINETUNE, step]);
    let mut tape = model.training_tape(&mut dropout);
    let fwd = model.summarize_forward(&mut tape, &batch.docs, &batch.summaries)?;
    let loss = tape.scalar(fwd.loss);
    if !loss.is_finite() {
        return Err(DamsError::Divergence { step: step + 1, component: "fine-tune loss".into() });
    }
    let mut grads = tape.backward(fwd.loss)?;
    drop(tape);
    if !grads.all_finite() {
        return Err(DamsError::Divergence { step: step + 1, component: "gradients".into() });
    }
    clip_grad_norm(&mut grads, cfg.clip_norm);
    adam.step(model.params_mut(), &grads, schedule)?;
    Ok(loss)
}

/// Teacher-forced token-level statistics on held-out pairs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DevMetrics {
    /// Mean negative log-likelihood per target token ([EOS] included).
    pub nll: Real,
    pub perplexity: Real,
    /// Fraction of target tokens that are the argmax prediction.
    pub accuracy: Real,
    pub tokens: usize,
}

pub fn dev_metrics(model: &DamsModel, pairs: &[EncodedPair]) -> Result<DevMetrics> {
    if pairs.is_empty() {
        return Err(DamsError::InvalidBatch("no dev pairs".into()));
    }
    let (mut nll, mut correct, mut tokens) = (0.0, 0usize, 0usize);
    for chunk in pairs.chunks(16) {
        let batch = SummBatch::from_pairs(chunk);
        let mut tape = model.inference_tape();
        let fwd = model.summarize_forward(&mut tape, &batch.docs, &batch.summaries)?;
        let logits = tape.tensor(fwd.logits);
        let steps = logits.rows() / chunk.len();
        for (b, target) in batch.summaries.iter().enumerate() {
            for t in 0..=target.len() {
                let gold = target.get(t).copied().unwrap_or(EOS);
                let row = logits.row(b * steps + t);
                let lp = kernels::log_softmax(row);
                nll -= lp[gold];
                // first maximum wins, matching greedy decoding
                let best = row.iter().enumerate().fold(0, |bi, (i, &v)| if v > row[bi] { i } else { bi });
                correct += usize::from(best == gold);
                tokens += 1;
            }
        }
    }
    let nll = nll / tokens as Real;
    Ok(DevMetrics { nll, perplexity: nll.exp(), accuracy: correct as Real / tokens as Real, tokens })
}

/// Fine-tuning run over a fixed training set.
pub struct Finetuner {
    pub model: DamsModel,
    pub adam: AdamState,
    pub config: FinetuneConfig,
    schedule: LrSchedule,
    train: Vec<EncodedPair>,
    sampler: CyclicSampler,
}

impl Finetuner {
    /// Fresh optimizer state, as the stacked model starts a new objective.
    pub fn new(model: DamsModel, train: Vec<EncodedPair>, config: FinetuneConfig) -> Result<Self> {
        config.validate()?;
        if train.is_empty() {
            return Err(DamsError::Config("fine-tuning needs at least one training pair".into()));
        }
        if let Some(i) = train.iter().position(|p| p.summary.is_empty() || p.sentences.is_empty()) {
            return Err(DamsError::InvalidBatch(format!("training pair {i} has an empty dialogue or summary")));
        }
        let adam = AdamState::new(model.params(), AdamConfig::default());
        let sampler = CyclicSampler::new(train.len(), config.batch_size, config.seed, stream::FINETUNE);
        Ok(Finetuner { schedule: config.schedule(), model, adam, config, train, sampler })
    }

    pub fn step_count(&self) -> u64 {
        self.adam.step
    }

    pub fn step(&mut self) -> Result<Real> {
        let idx = self.sampler.batch(self.adam.step);
        let batch = SummBatch::from_pairs(idx.iter().map(|&i| &self.train[i]));
        finetune_step(&mut self.model, &mut self.adam, &self.schedule, &batch, &self.config)
    }
}
