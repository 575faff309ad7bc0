use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{DamsError, Result};

/// Most utterances or article sentences fed to a sentence-level encoder.
pub const MAX_SENTENCES: usize = 24;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Utterance {
    pub speaker: String,
    pub text: String,
}

impl Utterance {
    pub fn new(speaker: impl Into<String>, text: impl Into<String>) -> Self {
        Utterance { speaker: speaker.into(), text: text.into() }
    }
}

/// A dialogue, with a reference summary in the fine-tune/eval schema.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dialogue {
    pub utterances: Vec<Utterance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextPiece {
    pub sentences: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArticleSummary {
    pub article_sentences: Vec<String>,
    pub summary: String,
}

/// A line-delimited JSON record with schema checks beyond the JSON shape.
pub trait Record: Serialize + DeserializeOwned {
    fn check(&self) -> std::result::Result<(), String>;
}

impl Record for Dialogue {
    fn check(&self) -> std::result::Result<(), String> {
        if self.utterances.is_empty() {
            return Err("dialogue has no utterances".into());
        }
        if let Some(i) = self.utterances.iter().position(|u| u.speaker.trim().is_empty()) {
            return Err(format!("utterance {i} has an empty speaker"));
        }
        Ok(())
    }
}

impl Record for TextPiece {
    fn check(&self) -> std::result::Result<(), String> {
        match self.sentences.len() {
            1 | 2 => Ok(()),
            n => Err(format!("text piece has {n} sentences; expected 1 or 2")),
        }
    }
}

impl Record for ArticleSummary {
    fn check(&self) -> std::result::Result<(), String> {
        if self.article_sentences.is_empty() {
            return Err("article has no sentences".into());
        }
        if self.summary.trim().is_empty() {
            return Err("article summary is empty".into());
        }
        Ok(())
    }
}

/// A dialogue from the fine-tune/eval schema, where the summary is required.
pub fn check_summarized(d: &Dialogue) -> std::result::Result<(), String> {
    match &d.summary {
        Some(s) if !s.trim().is_empty() => Ok(()),
        Some(_) => Err("summary is empty".into()),
        None => Err("missing field `summary`".into()),
    }
}

/// Reads one record per non-blank line; errors cite the 1-based line number.
pub fn read_records<T: Record>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| DamsError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| DamsError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: T = serde_json::from_str(&line).map_err(|e| DamsError::data(path, i + 1, e.to_string()))?;
        rec.check().map_err(|msg| DamsError::data(path, i + 1, msg))?;
        out.push(rec);
    }
    Ok(out)
}

/// Fine-tune/eval pairs: dialogues that must carry a summary.
pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<Dialogue>> {
    let path = path.as_ref();
    let recs: Vec<Dialogue> = read_records(path)?;
    // line numbers only matter on failure, so recount lazily
    if let Some(i) = recs.iter().position(|d| check_summarized(d).is_err()) {
        let line = nth_record_line(path, i)?;
        return Err(DamsError::data(path, line, check_summarized(&recs[i]).unwrap_err()));
    }
    Ok(recs)
}

fn nth_record_line(path: &Path, n: usize) -> Result<usize> {
    let text = std::fs::read_to_string(path).map_err(|e| DamsError::io(path, e))?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .nth(n)
        .map(|(i, _)| i + 1)
        .unwrap_or(0))
}

pub fn write_records<T: Record>(path: impl AsRef<Path>, records: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| DamsError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| DamsError::Usage(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| DamsError::io(path, e))?;
    }
    w.flush().map_err(|e| DamsError::io(path, e))
}
