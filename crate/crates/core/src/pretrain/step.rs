use std::collections::BTreeMap;

use crate::corpus::{MixedStream, NoiseConfig, Source, Vocab};
use crate::error::{DamsError, Result};
use crate::nn::DamsModel;
use crate::rng::{self, stream};
use crate::tensor::{clip_grad_norm, AdamConfig, AdamState, Gradients, Group, GroupSchedule, LrSchedule, Real, Var};

use super::data::{prepare_step, EncodedCorpora, PreparedStep};
use super::losses::{critic_losses, gen_loss, rec_loss, summ_loss};

/// Which pretraining sources contribute a loss term.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SourceSet {
    pub dialogues: bool,
    pub shorttexts: bool,
    pub articles: bool,
}

impl SourceSet {
    pub const ALL: SourceSet = SourceSet { dialogues: true, shorttexts: true, articles: true };

    pub fn without(source: Source) -> Self {
        let mut s = Self::ALL;
        match source {
            Source::Dialogues => s.dialogues = false,
            Source::ShortTexts => s.shorttexts = false,
            Source::Articles => s.articles = false,
        }
        s
    }

    pub fn contains(&self, source: Source) -> bool {
        match source {
            Source::Dialogues => self.dialogues,
            Source::ShortTexts => self.shorttexts,
            Source::Articles => self.articles,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: u64,
    pub warmup: u64,
    /// Records drawn from each source per step.
    pub batch_size: usize,
    pub alpha: Real,
    pub seed: u64,
    /// Base learning rate of every group without an override.
    pub lr: Real,
    pub group_overrides: BTreeMap<Group, GroupSchedule>,
    pub checkpoint_interval: u64,
    pub log_interval: u64,
    pub sources: SourceSet,
    /// Whether the two critics (and their adversarial terms) are present.
    pub critics: bool,
    pub clip_norm: Real,
    pub noise: NoiseConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 3000,
            warmup: 150,
            batch_size: 4,
            alpha: 0.1,
            seed: 1,
            lr: 1e-3,
            group_overrides: BTreeMap::new(),
            checkpoint_interval: 1000,
            log_interval: 1,
            sources: SourceSet::ALL,
            critics: true,
            clip_norm: 1.0,
            noise: NoiseConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DamsError::Config(m));
        if self.steps == 0 {
            return bad("steps must be positive".into());
        }
        if self.warmup == 0 {
            return bad("warmup must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be a finite non-negative number, got {}", self.alpha));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if self.log_interval == 0 || self.checkpoint_interval == 0 {
            return bad("log and checkpoint intervals must be positive".into());
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip norm must be positive".into());
        }
        Ok(())
    }

    /// Every group at the base rate and warmup unless overridden.
    pub fn schedule(&self) -> LrSchedule {
        let mut s = LrSchedule::uniform(&Group::ALL, self.lr, self.warmup);
        for (&g, o) in &self.group_overrides {
            s.set(g, o.base_lr, o.warmup);
        }
        s
    }
}

/// Per-step loss components and their combination.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub l_rec: Real,
    pub l_gen: Real,
    pub l_summ: Real,
    pub l_de: Real,
    pub l_dg: Real,
    pub alpha: Real,
    pub total: Real,
}

impl LossBreakdown {
    pub const TSV_HEADER: &'static str = "step\tl_rec\tl_gen\tl_summ\tl_de\tl_dg\talpha\ttotal";

    pub fn combine(l_rec: Real, l_gen: Real, l_summ: Real, l_de: Real, l_dg: Real, alpha: Real) -> Self {
        let mut b = LossBreakdown { l_rec, l_gen, l_summ, l_de, l_dg, alpha, total: 0.0 };
        b.total = b.recomputed_total();
        b
    }

    pub fn recomputed_total(&self) -> Real {
        self.l_rec + self.l_gen + self.l_summ + self.alpha * (self.l_de + self.l_dg)
    }

    pub fn tsv_row(&self, step: u64) -> String {
        format!(
            "{step}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.l_rec, self.l_gen, self.l_summ, self.l_de, self.l_dg, self.alpha, self.total
        )
    }

    pub fn parse_tsv_row(line: &str) -> Option<(u64, Self)> {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 8 {
            return None;
        }
        let v: Vec<Real> = f[1..].iter().map(|x| x.parse().ok()).collect::<Option<_>>()?;
        Some((
            f[0].parse().ok()?,
            LossBreakdown { l_rec: v[0], l_gen: v[1], l_summ: v[2], l_de: v[3], l_dg: v[4], alpha: v[5], total: v[6] },
        ))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    /// 1-based index of the completed step.
    pub step: u64,
    pub losses: LossBreakdown,
    /// Global gradient norm before clipping.
    pub grad_norm: Real,
    /// Critics skipped for lack of representations on one side.
    pub skipped: Vec<&'static str>,
}

/// Forward and backward pass of one step without touching the parameters.
pub fn pretrain_gradients(model: &DamsModel, batch: &PreparedStep, cfg: &TrainConfig) -> Result<(Gradients, StepReport)> {
    let step = batch.step;
    // one dropout stream per source keeps the sources independent of each other
    let [mut r_rec, mut r_gen, mut r_summ] =
        Source::ALL.map(|s| rng::derive(cfg.seed, &[stream::DROPOUT, step, s.index() as u64]));
    let mut tape = model.training_tape(&mut r_rec);
    let src = cfg.sources;

    let rec = if src.dialogues { Some(rec_loss(model, &mut tape, &batch.rec)?) } else { None };
    let gen = if src.shorttexts {
        tape.set_dropout_rng(&mut r_gen);
        Some(gen_loss(model, &mut tape, &batch.gen)?)
    } else {
        None
    };
    let summ = if src.articles {
        tape.set_dropout_rng(&mut r_summ);
        Some(summ_loss(model, &mut tape, &batch.summ)?)
    } else {
        None
    };

    let mut skipped = Vec::new();
    let critics = if cfg.critics {
        let c = critic_losses(
            model,
            &mut tape,
            rec.as_ref().map(|(_, e)| e.cls),
            summ.as_ref().map(|s| s.cls),
            gen.as_ref().map(|(_, m)| m),
            summ.as_ref().map(|s| &s.memories),
        )?;
        if c.l_de.is_none() {
            skipped.push("l_de");
        }
        if c.l_dg.is_none() {
            skipped.push("l_dg");
        }
        c
    } else {
        Default::default()
    };

    let value = |tape: &crate::tensor::Tape, v: Option<Var>| v.map_or(0.0, |v| tape.scalar(v));
    let l_rec = value(&tape, rec.as_ref().map(|r| r.0));
    let l_gen = value(&tape, gen.as_ref().map(|g| g.0));
    let l_summ = value(&tape, summ.as_ref().map(|s| s.loss));
    let l_de = value(&tape, critics.l_de);
    let l_dg = value(&tape, critics.l_dg);
    for (name, v) in [("l_rec", l_rec), ("l_gen", l_gen), ("l_summ", l_summ), ("l_de", l_de), ("l_dg", l_dg)] {
        if !v.is_finite() {
            return Err(DamsError::Divergence { step: step + 1, component: name.into() });
        }
    }

    let task: Vec<Var> = [rec.map(|r| r.0), gen.map(|g| g.0), summ.map(|s| s.loss)].into_iter().flatten().collect();
    let adversarial: Vec<Var> = [critics.l_de, critics.l_dg].into_iter().flatten().collect();
    let mut total: Option<Var> = None;
    for v in task {
        total = Some(total.map_or(v, |t| tape.add(t, v)));
    }
    if let Some(first) = adversarial.first() {
        let adv = adversarial[1..].iter().fold(*first, |a, &b| tape.add(a, b));
        let adv = tape.scale(adv, cfg.alpha);
        total = Some(total.map_or(adv, |t| tape.add(t, adv)));
    }
    let Some(total) = total else {
        return Err(DamsError::Config("every pretraining source is disabled".into()));
    };
    let total_value = tape.scalar(total);
    if !total_value.is_finite() {
        return Err(DamsError::Divergence { step: step + 1, component: "total".into() });
    }
    let grads = tape.backward(total)?;
    if !grads.all_finite() {
        return Err(DamsError::Divergence { step: step + 1, component: "gradients".into() });
    }
    let losses = LossBreakdown { l_rec, l_gen, l_summ, l_de, l_dg, alpha: cfg.alpha, total: total_value };
    let report = StepReport { step: step + 1, losses, grad_norm: grads.global_norm(), skipped };
    Ok((grads, report))
}

/// One combined backward pass over every loss term, global-norm clipping and
/// one Adam update.
pub fn pretrain_step(
    model: &mut DamsModel,
    adam: &mut AdamState,
    schedule: &LrSchedule,
    batch: &PreparedStep,
    cfg: &TrainConfig,
) -> Result<StepReport> {
    let (mut grads, report) = pretrain_gradients(model, batch, cfg)?;
    clip_grad_norm(&mut grads, cfg.clip_norm);
    adam.step(model.params_mut(), &grads, schedule)?;
    Ok(report)
}

/// Model, optimizer and data stream of a pretraining run.
pub struct Pretrainer {
    pub model: DamsModel,
    pub adam: AdamState,
    pub vocab: Vocab,
    pub config: TrainConfig,
    schedule: LrSchedule,
    corpora: EncodedCorpora,
    stream: MixedStream,
}

impl Pretrainer {
    pub fn new(model: DamsModel, vocab: Vocab, corpora: EncodedCorpora, config: TrainConfig) -> Result<Self> {
        let adam = AdamState::new(model.params(), AdamConfig::default());
        Self::resume(model, adam, vocab, corpora, config)
    }

    /// Continues from a restored model and optimizer; the stream is
    /// positioned at the optimizer's step count.
    pub fn resume(model: DamsModel, adam: AdamState, vocab: Vocab, corpora: EncodedCorpora, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if vocab.len() != model.vocab_size() {
            return Err(DamsError::Config(format!(
                "vocabulary has {} entries but the model expects {}",
                vocab.len(),
                model.vocab_size()
            )));
        }
        let mut stream = MixedStream::new(corpora.sizes(), config.batch_size, config.seed)?;
        stream.seek(adam.step);
        Ok(Pretrainer { schedule: config.schedule(), model, adam, vocab, config, corpora, stream })
    }

    /// Steps completed so far.
    pub fn step_count(&self) -> u64 {
        self.adam.step
    }

    pub fn next_batch(&mut self) -> PreparedStep {
        let triple = self.stream.next().expect("stream is infinite");
        prepare_step(&self.corpora, &triple, self.config.noise, self.config.seed)
    }

    pub fn step(&mut self) -> Result<StepReport> {
        let batch = self.next_batch();
        pretrain_step(&mut self.model, &mut self.adam, &self.schedule, &batch, &self.config)
    }
}
