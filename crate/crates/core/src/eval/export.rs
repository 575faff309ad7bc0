use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{DamsError, Result};
use crate::nn::DamsModel;

use super::probe::RepSet;

const EXPORT_CHUNK: usize = 64;

/// Dialogue-encoder [CLS] vectors of `sequences`, one row each.
pub fn encode_reps(model: &DamsModel, sequences: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(sequences.len());
    for chunk in sequences.chunks(EXPORT_CHUNK) {
        let t = model.cls_vectors(chunk)?;
        out.extend((0..t.rows()).map(|r| t.row(r).iter().map(|&x| x as f64).collect::<Vec<f64>>()));
    }
    Ok(out)
}

/// Writes `tag` followed by the d components of each vector, tab-separated.
/// Values use shortest round-trip formatting, so reading back is exact.
pub fn write_reps(w: &mut impl Write, tag: &str, vectors: &[Vec<f64>]) -> std::io::Result<()> {
    for v in vectors {
        write!(w, "{tag}")?;
        for x in v {
            write!(w, "\t{x}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Encodes `sequences` and appends them to `path` (created if missing).
pub fn export_reps(model: &DamsModel, sequences: &[Vec<usize>], tag: &str, path: impl AsRef<Path>, append: bool) -> Result<usize> {
    if tag.is_empty() || tag.contains(char::is_whitespace) {
        return Err(DamsError::Usage(format!("representation tag {tag:?} must be a non-empty word")));
    }
    let path = path.as_ref();
    let reps = encode_reps(model, sequences)?;
    let file = std::fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)
        .map_err(|e| DamsError::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_reps(&mut w, tag, &reps).and_then(|_| w.flush()).map_err(|e| DamsError::io(path, e))?;
    Ok(reps.len())
}

/// Groups a representation file by tag, in first-appearance order.
pub fn read_reps(path: impl AsRef<Path>) -> Result<Vec<RepSet>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| DamsError::io(path, e))?;
    let mut sets: Vec<RepSet> = Vec::new();
    let mut dim = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| DamsError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let tag = fields.next().unwrap_or_default();
        let v = fields
            .map(|f| f.parse::<f64>().map_err(|e| DamsError::data(path, i + 1, format!("bad value {f:?}: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        if v.is_empty() || *dim.get_or_insert(v.len()) != v.len() {
            return Err(DamsError::data(path, i + 1, format!("expected {} values, found {}", dim.unwrap_or(1), v.len())));
        }
        match sets.iter_mut().find(|s| s.tag == tag) {
            Some(s) => s.vectors.push(v),
            None => sets.push(RepSet::new(tag, vec![v])),
        }
    }
    Ok(sets)
}
