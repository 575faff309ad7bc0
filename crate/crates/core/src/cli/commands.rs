use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::corpus::{
    corpus_texts, generate_synthetic, read_pairs, read_records, write_records, ArticleSummary, Dialogue, TextPiece,
    Vocab,
};
use crate::error::{DamsError, Result};
use crate::eval::{
    domain_probe, mean_rouge, read_reps, rouge, write_reps, ConvergencePoint, ProbeReport, RepSet, RougeScore,
    CONVERGENCE_HEADER,
};
use crate::experiment::{self, encoder_reps};
use crate::finetune::{summarize, DecodeConfig};
use crate::nn::{DamsModel, ModelConfig};
use crate::pretrain::{
    encode_pair, load_checkpoint, save_checkpoint, EncodedCorpora, LossBreakdown, Pretrainer, TrainingState,
};
use crate::tensor::{AdamConfig, AdamState};

/// One line of a summary file.
#[derive(Serialize, Deserialize)]
struct SummaryLine {
    summary: String,
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| DamsError::io(path, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| DamsError::io(path, e))
}

/// Creates the output directory and writes the resolved-config echo.
fn start(cfg: &RunConfig, command: &str) -> Result<PathBuf> {
    let out = cfg.out_dir();
    create_dir(&out)?;
    write_file(&out.join(format!("{command}.config.txt")), cfg.echo())?;
    Ok(out)
}

fn existing(path: PathBuf, what: &str) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(DamsError::Config(format!("{what} not found: {}", path.display())))
    }
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let out = start(cfg, "synth")?;
    let spec = cfg.synth_spec()?;
    let c = generate_synthetic(&spec);
    write_records(out.join("dialogues.jsonl"), &c.dialogues)?;
    write_records(out.join("shorttexts.jsonl"), &c.shorttexts)?;
    write_records(out.join("articles.jsonl"), &c.articles)?;
    write_records(out.join("finetune.jsonl"), &c.finetune)?;
    write_records(out.join("eval.jsonl"), &c.eval)?;
    let manifest = serde_json::json!({
        "seed": spec.seed,
        "counts": {
            "dialogues.jsonl": c.dialogues.len(),
            "shorttexts.jsonl": c.shorttexts.len(),
            "articles.jsonl": c.articles.len(),
            "finetune.jsonl": c.finetune.len(),
            "eval.jsonl": c.eval.len(),
        }
    });
    write_file(&out.join("manifest.json"), format!("{manifest}\n"))?;
    println!("wrote synthetic corpora to {}", out.display());
    Ok(())
}

struct PretrainData {
    dialogues: Vec<Dialogue>,
    shorttexts: Vec<TextPiece>,
    articles: Vec<ArticleSummary>,
}

fn read_pretrain_data(cfg: &RunConfig) -> Result<PretrainData> {
    Ok(PretrainData {
        dialogues: read_records(existing(cfg.corpus_path("dialogues"), "dialogue corpus")?)?,
        shorttexts: read_records(existing(cfg.corpus_path("shorttexts"), "short-text corpus")?)?,
        articles: read_records(existing(cfg.corpus_path("articles"), "article corpus")?)?,
    })
}

fn read_optional<T: crate::corpus::Record>(path: PathBuf) -> Result<Vec<T>> {
    if path.is_file() {
        read_records(path)
    } else {
        Ok(Vec::new())
    }
}

/// Vocabulary over every corpus file present in the data directory, so
/// scratch and pretrained runs on the same data share one vocabulary.
fn build_vocab(cfg: &RunConfig) -> Result<Vocab> {
    let dialogues: Vec<Dialogue> = read_optional(cfg.corpus_path("dialogues"))?;
    let shorttexts: Vec<TextPiece> = read_optional(cfg.corpus_path("shorttexts"))?;
    let articles: Vec<ArticleSummary> = read_optional(cfg.corpus_path("articles"))?;
    let mut pairs: Vec<Dialogue> = read_optional(cfg.corpus_path("finetune"))?;
    pairs.extend(read_optional::<Dialogue>(cfg.corpus_path("eval"))?);
    Vocab::build(corpus_texts(&dialogues, &shorttexts, &articles, &pairs), cfg.vocab_size()?)
}

fn load_state(path: &Path) -> Result<TrainingState> {
    load_checkpoint(existing(path.to_path_buf(), "checkpoint")?, None)
}

fn state_of(model: &DamsModel, adam: &AdamState, vocab: &Vocab, cfg: &RunConfig) -> Result<TrainingState> {
    Ok(TrainingState {
        model: model.clone(),
        adam: adam.clone(),
        vocab: vocab.clone(),
        echo: cfg.entries(),
        seed: cfg.seed()?,
        stream_position: adam.step,
    })
}

pub fn cmd_pretrain(cfg: &RunConfig) -> Result<()> {
    let tcfg = cfg.train_config()?;
    let data = read_pretrain_data(cfg)?;
    let out = start(cfg, "pretrain")?;
    let resume = cfg.optional_path("pretrain.resume");
    let (model, adam, vocab) = match &resume {
        Some(path) => {
            let st = load_state(path)?;
            if st.seed != tcfg.seed {
                return Err(DamsError::Config(format!("checkpoint seed {} differs from run seed {}", st.seed, tcfg.seed)));
            }
            if st.model.config().block != cfg.preset()?.block() {
                return Err(DamsError::Config("checkpoint model shape differs from the configured preset".into()));
            }
            (st.model, st.adam, st.vocab)
        }
        None => {
            let vocab = build_vocab(cfg)?;
            let model = DamsModel::new(ModelConfig::new(vocab.len(), cfg.preset()?.block()), tcfg.seed)?;
            let adam = AdamState::new(model.params(), AdamConfig::default());
            (model, adam, vocab)
        }
    };
    vocab.save(out.join("vocab.txt"))?;
    let start_step = adam.step;
    let corpora = EncodedCorpora::encode(&vocab, &data.dialogues, &data.shorttexts, &data.articles);
    let mut run = Pretrainer::resume(model, adam, vocab, corpora, tcfg.clone())?;

    // a resumed run keeps the log rows up to its starting step
    let log_path = out.join("pretrain_log.tsv");
    let mut log = format!("{}\n", LossBreakdown::TSV_HEADER);
    if resume.is_some() {
        if let Ok(old) = fs::read_to_string(&log_path) {
            for line in old.lines().skip(1) {
                if LossBreakdown::parse_tsv_row(line).is_some_and(|(s, _)| s <= start_step) {
                    log.push_str(line);
                    log.push('\n');
                }
            }
        }
    }
    let ckpt_dir = out.join("checkpoints");
    create_dir(&ckpt_dir)?;
    while run.step_count() < tcfg.steps {
        let report = run.step()?;
        if report.step % tcfg.log_interval.max(1) == 0 {
            log.push_str(&report.losses.tsv_row(report.step));
            log.push('\n');
        }
        if tcfg.checkpoint_interval > 0 && report.step % tcfg.checkpoint_interval == 0 {
            let st = state_of(&run.model, &run.adam, &run.vocab, cfg)?;
            save_checkpoint(&st, ckpt_dir.join(format!("step_{:06}.ckpt", report.step)))?;
        }
    }
    write_file(&log_path, log)?;
    let final_path = out.join("pretrain_final.ckpt");
    save_checkpoint(&state_of(&run.model, &run.adam, &run.vocab, cfg)?, &final_path)?;
    println!("pretrained {} steps; final checkpoint {}", run.step_count(), final_path.display());
    Ok(())
}

pub fn cmd_finetune(cfg: &RunConfig) -> Result<()> {
    let fcfg = cfg.finetune_config()?;
    let fraction = cfg.train_fraction()?;
    if fraction == 0.0 && fcfg.steps > 0 {
        return Err(DamsError::Config("train fraction 0 with a non-zero step count".into()));
    }
    let train_path = existing(cfg.corpus_path("finetune"), "fine-tune corpus")?;
    let dev_path = existing(cfg.corpus_path("eval"), "dev corpus")?;
    let from = cfg.optional_path("finetune.from_checkpoint");
    let (model, vocab) = match &from {
        Some(path) => {
            let st = load_state(path)?;
            (st.model, st.vocab)
        }
        None => {
            let vocab = build_vocab(cfg)?;
            (DamsModel::new(ModelConfig::new(vocab.len(), cfg.preset()?.block()), cfg.seed()?)?, vocab)
        }
    };
    let train: Vec<_> = read_pairs(&train_path)?.iter().map(|d| encode_pair(&vocab, d)).collect();
    let dev: Vec<_> = read_pairs(&dev_path)?.iter().map(|d| encode_pair(&vocab, d)).collect();
    let out = start(cfg, "finetune")?;
    let steps = fcfg.steps;
    let run = experiment::finetune(model, &train, &dev, fraction, fcfg)?;

    let indices: Vec<String> = run.train_indices.iter().map(usize::to_string).collect();
    let mut log = format!("# train_indices\t{}\n{CONVERGENCE_HEADER}\n", indices.join(","));
    for p in &run.curve {
        log.push_str(&ConvergencePoint::tsv_row(p));
        log.push('\n');
    }
    write_file(&out.join("finetune_log.tsv"), log)?;
    let final_path = out.join("finetune_final.ckpt");
    match (&from, steps) {
        (Some(src), 0) => {
            fs::copy(src, &final_path).map_err(|e| DamsError::io(&final_path, e))?;
        }
        _ => save_checkpoint(&state_of(&run.model, &run.adam, &vocab, cfg)?, &final_path)?,
    }
    let last = run.final_point();
    println!(
        "fine-tuned {steps} steps on {} pairs; dev ppl {:.4} acc {:.4}; checkpoint {}",
        run.train_indices.len(),
        last.dev_ppl,
        last.dev_acc,
        final_path.display()
    );
    Ok(())
}

/// Applies `f` to every item on up to `threads` scoped threads; results
/// keep input order regardless of scheduling.
fn parallel_map<T: Sync, U: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> Result<U> + Sync) -> Result<Vec<U>> {
    if threads <= 1 || items.len() < 2 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let parts: Vec<Result<Vec<U>>> = std::thread::scope(|s| {
        let handles: Vec<_> = items.chunks(chunk).map(|c| s.spawn(|| c.iter().map(&f).collect())).collect();
        handles.into_iter().map(|h| h.join().expect("worker thread panicked")).collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

pub fn cmd_summarize(cfg: &RunConfig) -> Result<()> {
    let decode: DecodeConfig = cfg.decode_config()?;
    let st = load_state(&cfg.required_path("io.checkpoint", "--checkpoint")?)?;
    let input = existing(cfg.required_path("io.input", "--input")?, "input file")?;
    let dialogues: Vec<Dialogue> = read_records(&input)?;
    let out = start(cfg, "summarize")?;
    let output = cfg.optional_path("io.output").unwrap_or_else(|| out.join("summaries.jsonl"));
    let summaries = parallel_map(&dialogues, cfg.threads()?, |d| summarize(&st.model, &st.vocab, d, &decode))?;
    let mut text = String::new();
    for s in summaries {
        let line = serde_json::to_string(&SummaryLine { summary: s }).map_err(|e| DamsError::Usage(e.to_string()))?;
        text.push_str(&line);
        text.push('\n');
    }
    write_file(&output, text)?;
    println!("wrote {} summaries to {}", dialogues.len(), output.display());
    Ok(())
}

/// The `summary` field of every non-blank line of a JSON-lines file.
fn read_summaries(path: &Path) -> Result<Vec<String>> {
    let file = fs::File::open(path).map_err(|e| DamsError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| DamsError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(&line).map_err(|e| DamsError::data(path, i + 1, e.to_string()))?;
        match v.get("summary").and_then(|s| s.as_str()) {
            Some(s) => out.push(s.to_string()),
            None => return Err(DamsError::data(path, i + 1, "missing string field `summary`")),
        }
    }
    Ok(out)
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<RougeScore> {
    let cand_path = existing(cfg.required_path("io.candidates", "--candidates")?, "candidate file")?;
    let ref_path = existing(cfg.required_path("io.references", "--references")?, "reference file")?;
    let cands = read_summaries(&cand_path)?;
    let refs = read_summaries(&ref_path)?;
    if cands.len() != refs.len() {
        return Err(DamsError::data(
            &cand_path,
            cands.len(),
            format!("{} candidates but {} references", cands.len(), refs.len()),
        ));
    }
    let out = start(cfg, "evaluate")?;
    let pairs: Vec<(&String, &String)> = cands.iter().zip(&refs).collect();
    let scores = parallel_map(&pairs, cfg.threads()?, |(c, r)| Ok(rouge(c, r)))?;
    let mean = mean_rouge(&scores)?;
    let table = mean.to_tsv();
    write_file(&out.join("rouge.tsv"), &table)?;
    print!("{table}");
    Ok(mean)
}

pub fn cmd_probe(cfg: &RunConfig) -> Result<ProbeReport> {
    let seed = cfg.seed()?;
    let (a, b) = match (cfg.optional_path("io.reps"), cfg.optional_path("io.checkpoint")) {
        (Some(path), _) => {
            let sets = read_reps(existing(path.clone(), "representation file")?)?;
            match <[RepSet; 2]>::try_from(sets) {
                Ok([a, b]) => (a, b),
                Err(sets) => {
                    return Err(DamsError::data(&path, 0, format!("expected exactly two tags, found {}", sets.len())));
                }
            }
        }
        (None, Some(ckpt)) => {
            let st = load_state(&ckpt)?;
            let dialogues: Vec<Dialogue> = read_records(existing(cfg.corpus_path("eval"), "dev corpus")?)?;
            let articles: Vec<ArticleSummary> = read_records(existing(cfg.corpus_path("articles"), "article corpus")?)?;
            encoder_reps(&st.model, &st.vocab, &dialogues, &articles, cfg.probe_per_domain()?)?
        }
        (None, None) => return Err(DamsError::Config("probe needs --reps or --checkpoint".into())),
    };
    let out = start(cfg, "probe")?;
    if cfg.optional_path("io.reps").is_none() {
        let path = out.join("reps.tsv");
        let mut w = std::io::BufWriter::new(fs::File::create(&path).map_err(|e| DamsError::io(&path, e))?);
        write_reps(&mut w, &a.tag, &a.vectors)
            .and_then(|_| write_reps(&mut w, &b.tag, &b.vectors))
            .and_then(|_| w.flush())
            .map_err(|e| DamsError::io(&path, e))?;
    }
    let report = domain_probe(&a, &b, seed)?;
    let table = report.to_tsv();
    write_file(&out.join("probe.tsv"), &table)?;
    print!("{table}");
    Ok(report)
}
