//! The `dams` command line: one subcommand per pipeline stage, settings from
//! a `key = value` file overridden by flags.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub use commands::{cmd_evaluate, cmd_finetune, cmd_pretrain, cmd_probe, cmd_summarize, cmd_synth};
pub use config::RunConfig;

use crate::error::{DamsError, Result};

#[derive(Debug, Parser)]
#[command(name = "dams", version, about = "Multi-source pretraining for low-resource dialogue summarization")]
pub struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Settings file of `key = value` lines.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads for summarization and scoring.
    #[arg(long, global = true, env = "DAMS_THREADS")]
    threads: Option<usize>,
    /// Directory holding the corpus files.
    #[arg(long, global = true, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Any configuration key, e.g. `--set pretrain.lr.critic_enc=0.003`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic corpora and a manifest.
    Synth,
    /// Multi-source pretraining with periodic checkpoints.
    Pretrain {
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        alpha: Option<f64>,
        /// Continue from a pretraining checkpoint.
        #[arg(long, value_name = "CKPT")]
        resume: Option<PathBuf>,
    },
    /// Fine-tune the stacked summarizer, logging dev perplexity and accuracy.
    Finetune {
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long, value_name = "CKPT")]
        from_checkpoint: Option<PathBuf>,
        #[arg(long)]
        train_fraction: Option<f64>,
    },
    /// Beam-search summaries of a dialogue file.
    Summarize {
        #[arg(long, value_name = "CKPT")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// ROUGE-1/2/L of candidate summaries against references.
    Evaluate {
        #[arg(long)]
        candidates: Option<PathBuf>,
        #[arg(long)]
        references: Option<PathBuf>,
    },
    /// Linear domain probe over exported or freshly encoded representations.
    Probe {
        /// Representation file holding exactly two tags.
        #[arg(long)]
        reps: Option<PathBuf>,
        /// Encode dev utterances and article sentences with this checkpoint.
        #[arg(long, value_name = "CKPT")]
        checkpoint: Option<PathBuf>,
    },
}

fn path_str(p: &std::path::Path) -> String {
    p.display().to_string()
}

impl Cli {
    /// Defaults, then the settings file, then flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let c = &self.common;
        if let Some(path) = &c.config {
            cfg.merge_file(path)?;
        }
        let mut flags: Vec<(&str, String)> = Vec::new();
        if let Some(v) = c.seed {
            flags.push(("seed", v.to_string()));
        }
        if let Some(v) = &c.out {
            flags.push(("out", path_str(v)));
        }
        if let Some(v) = c.threads {
            flags.push(("threads", v.to_string()));
        }
        if let Some(v) = &c.data {
            flags.push(("data.dir", path_str(v)));
        }
        match &self.command {
            Command::Synth => {}
            Command::Pretrain { steps, alpha, resume } => {
                flags.extend(steps.map(|v| ("pretrain.steps", v.to_string())));
                flags.extend(alpha.map(|v| ("pretrain.alpha", v.to_string())));
                flags.extend(resume.as_deref().map(|v| ("pretrain.resume", path_str(v))));
            }
            Command::Finetune { steps, from_checkpoint, train_fraction } => {
                flags.extend(steps.map(|v| ("finetune.steps", v.to_string())));
                flags.extend(from_checkpoint.as_deref().map(|v| ("finetune.from_checkpoint", path_str(v))));
                flags.extend(train_fraction.map(|v| ("finetune.train_fraction", v.to_string())));
            }
            Command::Summarize { checkpoint, input, output } => {
                flags.extend(checkpoint.as_deref().map(|v| ("io.checkpoint", path_str(v))));
                flags.extend(input.as_deref().map(|v| ("io.input", path_str(v))));
                flags.extend(output.as_deref().map(|v| ("io.output", path_str(v))));
            }
            Command::Evaluate { candidates, references } => {
                flags.extend(candidates.as_deref().map(|v| ("io.candidates", path_str(v))));
                flags.extend(references.as_deref().map(|v| ("io.references", path_str(v))));
            }
            Command::Probe { reps, checkpoint } => {
                flags.extend(reps.as_deref().map(|v| ("io.reps", path_str(v))));
                flags.extend(checkpoint.as_deref().map(|v| ("io.checkpoint", path_str(v))));
            }
        }
        for (k, v) in flags {
            cfg.set(k, v)?;
        }
        for kv in &c.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| DamsError::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn execute(&self) -> Result<()> {
        let cfg = self.resolve()?;
        match self.command {
            Command::Synth => cmd_synth(&cfg),
            Command::Pretrain { .. } => cmd_pretrain(&cfg),
            Command::Finetune { .. } => cmd_finetune(&cfg),
            Command::Summarize { .. } => cmd_summarize(&cfg),
            Command::Evaluate { .. } => cmd_evaluate(&cfg).map(drop),
            Command::Probe { .. } => cmd_probe(&cfg).map(drop),
        }
    }
}

impl DamsError {
    /// Process exit status: 2 configuration, 3 data, 4 numeric divergence.
    pub fn exit_code(&self) -> u8 {
        match self {
            DamsError::Config(_) | DamsError::Usage(_) => 2,
            DamsError::Divergence { .. } | DamsError::NumericDomain(_) => 4,
            _ => 3,
        }
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.execute() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
