use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::corpus::{NoiseConfig, Source, SynthSpec};
use crate::error::{DamsError, Result};
use crate::experiment::MAX_VOCAB;
use crate::finetune::{DecodeConfig, FinetuneConfig};
use crate::nn::Preset;
use crate::pretrain::{SourceSet, TrainConfig};
use crate::tensor::{Group, GroupSchedule};

/// Value of a length bound that follows the preset.
const AUTO: &str = "auto";

/// Every fixed key with its default. Per-group schedule keys
/// (`pretrain.lr.<group>`, `pretrain.warmup.<group>`) are accepted on top.
fn defaults() -> Vec<(&'static str, String)> {
    let t = TrainConfig::default();
    let f = FinetuneConfig::default();
    let d = DecodeConfig::default();
    let s = SynthSpec::default();
    vec![
        ("preset", "toy".into()),
        ("seed", "1".into()),
        ("out", "runs".into()),
        ("threads", "1".into()),
        ("vocab.max_size", MAX_VOCAB.to_string()),
        ("data.dir", "data".into()),
        ("data.dialogues", String::new()),
        ("data.shorttexts", String::new()),
        ("data.articles", String::new()),
        ("data.finetune", String::new()),
        ("data.eval", String::new()),
        ("synth.dialogues", s.dialogues.to_string()),
        ("synth.shorttexts", s.shorttexts.to_string()),
        ("synth.articles", s.articles.to_string()),
        ("synth.finetune", s.finetune.to_string()),
        ("synth.eval", s.eval.to_string()),
        ("pretrain.steps", t.steps.to_string()),
        ("pretrain.warmup", t.warmup.to_string()),
        ("pretrain.batch_size", t.batch_size.to_string()),
        ("pretrain.alpha", t.alpha.to_string()),
        ("pretrain.lr", t.lr.to_string()),
        ("pretrain.checkpoint_interval", t.checkpoint_interval.to_string()),
        ("pretrain.log_interval", t.log_interval.to_string()),
        ("pretrain.sources", "dialogues,shorttexts,articles".into()),
        ("pretrain.critics", t.critics.to_string()),
        ("pretrain.clip_norm", t.clip_norm.to_string()),
        ("pretrain.mask_rate", t.noise.mask_rate.to_string()),
        ("pretrain.unit_keep_prob", t.noise.unit_keep_prob.to_string()),
        ("pretrain.resume", String::new()),
        ("finetune.steps", f.steps.to_string()),
        ("finetune.warmup", f.warmup.to_string()),
        ("finetune.batch_size", f.batch_size.to_string()),
        ("finetune.lr", f.lr.to_string()),
        ("finetune.eval_interval", f.eval_interval.to_string()),
        ("finetune.clip_norm", f.clip_norm.to_string()),
        ("finetune.train_fraction", "1".into()),
        ("finetune.from_checkpoint", String::new()),
        ("decode.beam_size", d.beam_size.to_string()),
        ("decode.min_length", AUTO.into()),
        ("decode.max_length", AUTO.into()),
        ("decode.length_penalty", d.length_penalty.to_string()),
        ("io.checkpoint", String::new()),
        ("io.input", String::new()),
        ("io.output", String::new()),
        ("io.candidates", String::new()),
        ("io.references", String::new()),
        ("io.reps", String::new()),
        ("probe.per_domain", "400".into()),
    ]
}

fn is_group_key(key: &str) -> bool {
    ["pretrain.lr.", "pretrain.warmup."]
        .iter()
        .any(|p| key.strip_prefix(p).is_some_and(|g| Group::from_name(g).is_some()))
}

/// Fully resolved settings of one command invocation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { values: defaults().into_iter().map(|(k, v)| (k.to_string(), v)).collect() }
    }
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse_text(text: &str, origin: &str) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| DamsError::Config(format!("{origin}:{}: expected `key = value`", i + 1)))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        if !self.values.contains_key(key) && !is_group_key(key) {
            return Err(DamsError::Config(format!("unknown configuration key {key:?}")));
        }
        self.values.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| DamsError::io(path, e))?;
        for (k, v) in Self::parse_text(&text, &path.display().to_string())? {
            self.set(&k, v)?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    /// Sorted `key = value` lines; loading them back gives the same config.
    pub fn echo(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Settings that can influence results; the output location and
    /// thread count are left out so artifacts do not depend on them.
    pub fn entries(&self) -> Vec<(String, String)> {
        self.values
            .iter()
            .filter(|(k, _)| !matches!(k.as_str(), "out" | "threads"))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key);
        v.parse().map_err(|_| DamsError::Config(format!("{key} = {v:?} is not a valid value")))
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        let v = self.get(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    /// A required file argument; `flag` names how to provide it.
    pub fn required_path(&self, key: &str, flag: &str) -> Result<PathBuf> {
        self.path(key).ok_or_else(|| DamsError::Config(format!("{flag} is required (config key {key})")))
    }

    pub fn optional_path(&self, key: &str) -> Option<PathBuf> {
        self.path(key)
    }

    pub fn seed(&self) -> Result<u64> {
        self.parse("seed")
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.get("out"))
    }

    pub fn threads(&self) -> Result<usize> {
        let n: usize = self.parse("threads")?;
        if n == 0 {
            return Err(DamsError::Config("threads must be at least 1".into()));
        }
        Ok(n)
    }

    pub fn preset(&self) -> Result<Preset> {
        Preset::parse(self.get("preset"))
    }

    pub fn vocab_size(&self) -> Result<usize> {
        self.parse("vocab.max_size")
    }

    /// Path of corpus `name` (`dialogues`, `shorttexts`, `articles`,
    /// `finetune`, `eval`), defaulting to `<data.dir>/<name>.jsonl`.
    pub fn corpus_path(&self, name: &str) -> PathBuf {
        self.path(&format!("data.{name}")).unwrap_or_else(|| Path::new(self.get("data.dir")).join(format!("{name}.jsonl")))
    }

    pub fn synth_spec(&self) -> Result<SynthSpec> {
        Ok(SynthSpec {
            dialogues: self.parse("synth.dialogues")?,
            shorttexts: self.parse("synth.shorttexts")?,
            articles: self.parse("synth.articles")?,
            finetune: self.parse("synth.finetune")?,
            eval: self.parse("synth.eval")?,
            seed: self.seed()?,
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut sources = SourceSet { dialogues: false, shorttexts: false, articles: false };
        for name in self.get("pretrain.sources").split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match Source::ALL.iter().find(|s| s.name() == name) {
                Some(Source::Dialogues) => sources.dialogues = true,
                Some(Source::ShortTexts) => sources.shorttexts = true,
                Some(Source::Articles) => sources.articles = true,
                None => return Err(DamsError::Config(format!("unknown pretraining source {name:?}"))),
            }
        }
        let lr: f64 = self.parse("pretrain.lr")?;
        let warmup: u64 = self.parse("pretrain.warmup")?;
        let mut group_overrides = BTreeMap::new();
        for g in Group::ALL {
            let (lk, wk) = (format!("pretrain.lr.{g}"), format!("pretrain.warmup.{g}"));
            if self.values.contains_key(&lk) || self.values.contains_key(&wk) {
                let base_lr = if self.values.contains_key(&lk) { self.parse(&lk)? } else { lr };
                let w = if self.values.contains_key(&wk) { self.parse(&wk)? } else { warmup };
                group_overrides.insert(g, GroupSchedule { base_lr, warmup: w });
            }
        }
        let cfg = TrainConfig {
            steps: self.parse("pretrain.steps")?,
            warmup,
            batch_size: self.parse("pretrain.batch_size")?,
            alpha: self.parse("pretrain.alpha")?,
            seed: self.seed()?,
            lr,
            group_overrides,
            checkpoint_interval: self.parse("pretrain.checkpoint_interval")?,
            log_interval: self.parse("pretrain.log_interval")?,
            sources,
            critics: self.parse("pretrain.critics")?,
            clip_norm: self.parse("pretrain.clip_norm")?,
            noise: NoiseConfig {
                mask_rate: self.parse("pretrain.mask_rate")?,
                unit_keep_prob: self.parse("pretrain.unit_keep_prob")?,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn finetune_config(&self) -> Result<FinetuneConfig> {
        let cfg = FinetuneConfig {
            steps: self.parse("finetune.steps")?,
            warmup: self.parse("finetune.warmup")?,
            batch_size: self.parse("finetune.batch_size")?,
            lr: self.parse("finetune.lr")?,
            seed: self.seed()?,
            eval_interval: self.parse("finetune.eval_interval")?,
            clip_norm: self.parse("finetune.clip_norm")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_fraction(&self) -> Result<f64> {
        let f: f64 = self.parse("finetune.train_fraction")?;
        if !(0.0..=1.0).contains(&f) {
            return Err(DamsError::Config(format!("train fraction {f} outside (0, 1]")));
        }
        Ok(f)
    }

    pub fn decode_config(&self) -> Result<DecodeConfig> {
        let preset = DecodeConfig::for_preset(self.preset()?);
        let length = |key: &str, auto: usize| -> Result<usize> {
            if self.get(key) == AUTO {
                Ok(auto)
            } else {
                self.parse(key)
            }
        };
        let cfg = DecodeConfig {
            beam_size: self.parse("decode.beam_size")?,
            min_length: length("decode.min_length", preset.min_length)?,
            max_length: length("decode.max_length", preset.max_length)?,
            length_penalty: self.parse("decode.length_penalty")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn probe_per_domain(&self) -> Result<usize> {
        self.parse("probe.per_domain")
    }
}
