//! Python bindings: synthetic corpora, pretraining, fine-tuning, beam-search
//! summaries, ROUGE and the domain probe.

use std::collections::BTreeMap;

use dams::corpus::{tokenize as tokenize_text, Dialogue, Source, SynthSpec, Utterance};
use dams::eval::{domain_probe as probe_reps, RepSet, RougeComponent, RougeScore};
use dams::experiment::{self, Workbench};
use dams::finetune::{summarize as summarize_dialogue, DecodeConfig, FinetuneConfig};
use dams::nn::{DamsModel, Preset};
use dams::pretrain::{load_checkpoint, save_checkpoint, SourceSet, TrainConfig, TrainingState};
use dams::tensor::{AdamConfig, AdamState};
use dams::DamsError;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: DamsError) -> PyErr {
    let msg = e.to_string();
    match e {
        DamsError::Io { .. } => PyIOError::new_err(msg),
        DamsError::Divergence { .. } | DamsError::Checkpoint(_) => PyRuntimeError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

type Scores = BTreeMap<String, (f64, f64, f64)>;

fn scores(s: &RougeScore) -> Scores {
    let triple = |c: &RougeComponent| (c.precision, c.recall, c.f1);
    s.components().iter().map(|(name, c)| (name.to_string(), triple(c))).collect()
}

fn dialogue(utterances: Vec<(String, String)>) -> Dialogue {
    Dialogue { utterances: utterances.into_iter().map(|(s, t)| Utterance::new(s, t)).collect(), summary: None }
}

/// Synthetic corpora with their vocabulary and encodings.
#[pyclass(module = "dams_py")]
struct Corpus {
    bench: Workbench,
}

#[pymethods]
impl Corpus {
    #[new]
    #[pyo3(signature = (dialogues=2000, shorttexts=2000, articles=2000, finetune=200, eval=100, seed=1))]
    fn new(dialogues: usize, shorttexts: usize, articles: usize, finetune: usize, eval: usize, seed: u64) -> PyResult<Self> {
        let spec = SynthSpec { dialogues, shorttexts, articles, finetune, eval, seed };
        Ok(Corpus { bench: Workbench::synthetic(&spec).map_err(to_py)? })
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.bench.vocab.len()
    }

    /// Record counts: dialogues, pieces, articles, fine-tune pairs, eval pairs.
    fn counts(&self) -> BTreeMap<&'static str, usize> {
        let c = &self.bench.corpora;
        BTreeMap::from([
            ("dialogues", c.dialogues.len()),
            ("shorttexts", c.shorttexts.len()),
            ("articles", c.articles.len()),
            ("finetune", c.finetune.len()),
            ("eval", c.eval.len()),
        ])
    }

    /// Held-out dialogues as `(speaker, text)` lists.
    fn eval_dialogues(&self) -> Vec<Vec<(String, String)>> {
        let turns = |d: &Dialogue| d.utterances.iter().map(|u| (u.speaker.clone(), u.text.clone())).collect();
        self.bench.corpora.eval.iter().map(turns).collect()
    }

    fn eval_summaries(&self) -> Vec<String> {
        self.bench.corpora.eval.iter().map(|d| d.summary.clone().unwrap_or_default()).collect()
    }
}

fn preset(name: &str) -> PyResult<Preset> {
    Preset::parse(name).map_err(to_py)
}

fn sources(names: Vec<String>) -> PyResult<SourceSet> {
    let mut set = SourceSet { dialogues: false, shorttexts: false, articles: false };
    for n in names {
        match Source::ALL.iter().find(|s| s.name() == n) {
            Some(Source::Dialogues) => set.dialogues = true,
            Some(Source::ShortTexts) => set.shorttexts = true,
            Some(Source::Articles) => set.articles = true,
            None => return Err(PyValueError::new_err(format!("unknown source {n:?}"))),
        }
    }
    Ok(set)
}

/// A DAMS model together with the vocabulary it was built on.
#[pyclass(module = "dams_py")]
struct Model {
    model: DamsModel,
    vocab: dams::corpus::Vocab,
    preset: Preset,
}

impl Model {
    fn decode_config(&self, beam_size: usize, min_length: Option<usize>, max_length: Option<usize>) -> DecodeConfig {
        let d = DecodeConfig::for_preset(self.preset);
        DecodeConfig {
            beam_size,
            min_length: min_length.unwrap_or(d.min_length),
            max_length: max_length.unwrap_or(d.max_length),
            ..d
        }
    }
}

#[pymethods]
impl Model {
    /// Randomly initialised model for `corpus`.
    #[staticmethod]
    #[pyo3(signature = (corpus, preset="toy", seed=1))]
    fn fresh(corpus: &Corpus, preset: &str, seed: u64) -> PyResult<Self> {
        let p = self::preset(preset)?;
        let model = corpus.bench.fresh_model(p.block(), seed).map_err(to_py)?;
        Ok(Model { model, vocab: corpus.bench.vocab.clone(), preset: p })
    }

    /// Multi-source pretraining from scratch. Returns the model and one
    /// loss dictionary per step.
    #[staticmethod]
    #[pyo3(signature = (corpus, steps=3000, alpha=0.1, critics=true,
        sources=vec!["dialogues".to_string(), "shorttexts".to_string(), "articles".to_string()],
        preset="toy", seed=1))]
    fn pretrain(
        corpus: &Corpus,
        steps: u64,
        alpha: f64,
        critics: bool,
        sources: Vec<String>,
        preset: &str,
        seed: u64,
    ) -> PyResult<(Self, Vec<BTreeMap<&'static str, f64>>)> {
        let p = self::preset(preset)?;
        let warmup = TrainConfig::default().warmup.min(steps.max(1));
        let cfg = TrainConfig { steps, warmup, alpha: alpha as _, critics, sources: self::sources(sources)?, seed, ..Default::default() };
        let mut log = Vec::new();
        let run = experiment::pretrain(&corpus.bench, p.block(), cfg, |r| {
            let l = &r.losses;
            log.push(BTreeMap::from([
                ("l_rec", f64::from(l.l_rec)),
                ("l_gen", f64::from(l.l_gen)),
                ("l_summ", f64::from(l.l_summ)),
                ("l_de", f64::from(l.l_de)),
                ("l_dg", f64::from(l.l_dg)),
                ("total", f64::from(l.total)),
            ]));
        })
        .map_err(to_py)?;
        Ok((Model { model: run.model, vocab: run.vocab, preset: p }, log))
    }

    /// Fine-tunes in place on a seeded fraction of the corpus' pairs and
    /// returns `(step, dev perplexity, dev word accuracy)` points.
    #[pyo3(signature = (corpus, steps=1000, fraction=1.0, seed=1))]
    fn finetune(&mut self, corpus: &Corpus, steps: u64, fraction: f64, seed: u64) -> PyResult<Vec<(u64, f64, f64)>> {
        let cfg = FinetuneConfig { steps, seed, warmup: FinetuneConfig::default().warmup.min(steps.max(1)), ..Default::default() };
        let b = &corpus.bench;
        let run = experiment::finetune(self.model.clone(), &b.finetune, &b.dev, fraction, cfg).map_err(to_py)?;
        self.model = run.model;
        Ok(run.curve.iter().map(|p| (p.step, p.dev_ppl, p.dev_acc)).collect())
    }

    /// Beam-search summary of one dialogue given as `(speaker, text)` pairs.
    #[pyo3(signature = (utterances, beam_size=3, min_length=None, max_length=None))]
    fn summarize(
        &self,
        utterances: Vec<(String, String)>,
        beam_size: usize,
        min_length: Option<usize>,
        max_length: Option<usize>,
    ) -> PyResult<String> {
        let cfg = self.decode_config(beam_size, min_length, max_length);
        summarize_dialogue(&self.model, &self.vocab, &dialogue(utterances), &cfg).map_err(to_py)
    }

    /// Corpus ROUGE of generated summaries on the held-out pairs.
    #[pyo3(signature = (corpus, beam_size=3))]
    fn dev_rouge(&self, corpus: &Corpus, beam_size: usize) -> PyResult<Scores> {
        let cfg = self.decode_config(beam_size, None, None);
        let s = experiment::dev_rouge(&self.model, &self.vocab, &corpus.bench.corpora.eval, &cfg).map_err(to_py)?;
        Ok(scores(&s))
    }

    /// Held-out accuracy of a linear probe separating dialogue-utterance
    /// from article-sentence encodings.
    #[pyo3(signature = (corpus, per_domain=400, seed=1))]
    fn probe(&self, corpus: &Corpus, per_domain: usize, seed: u64) -> PyResult<f64> {
        let c = &corpus.bench.corpora;
        let r = experiment::encoder_probe(&self.model, &self.vocab, &c.eval, &c.articles, per_domain, seed).map_err(to_py)?;
        Ok(r.accuracy)
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.model.params().num_values()
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let state = TrainingState {
            model: self.model.clone(),
            adam: AdamState::new(self.model.params(), AdamConfig::default()),
            vocab: self.vocab.clone(),
            echo: vec![("preset".into(), self.preset.name().into())],
            seed: 0,
            stream_position: 0,
        };
        save_checkpoint(&state, path).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let state = load_checkpoint(path, None).map_err(to_py)?;
        let preset = state.echo.iter().find(|(k, _)| k == "preset").map_or(Ok(Preset::Toy), |(_, v)| preset(v))?;
        Ok(Model { model: state.model, vocab: state.vocab, preset })
    }
}

/// ROUGE-1/2/L of one pair as `{name: (precision, recall, f1)}`.
#[pyfunction]
fn rouge(candidate: &str, reference: &str) -> Scores {
    scores(&dams::eval::rouge(candidate, reference))
}

/// Mean ROUGE over `(candidate, reference)` pairs.
#[pyfunction]
fn corpus_rouge(pairs: Vec<(String, String)>) -> PyResult<Scores> {
    dams::eval::corpus_rouge(&pairs).map(|s| scores(&s)).map_err(to_py)
}

/// Held-out accuracy of a linear probe separating two sets of vectors.
#[pyfunction]
#[pyo3(signature = (a, b, seed=1))]
fn domain_probe(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, seed: u64) -> PyResult<f64> {
    let r = probe_reps(&RepSet::new("a", a), &RepSet::new("b", b), seed).map_err(to_py)?;
    Ok(r.accuracy)
}

#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    tokenize_text(text)
}

#[pymodule]
fn dams_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Corpus>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(rouge, m)?)?;
    m.add_function(wrap_pyfunction!(corpus_rouge, m)?)?;
    m.add_function(wrap_pyfunction!(domain_probe, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    Ok(())
}
