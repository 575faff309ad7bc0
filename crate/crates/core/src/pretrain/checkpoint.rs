//! Binary checkpoint: `DAMS` magic, format version, then length-prefixed
//! blocks (config text, vocabulary, named tensors, optimizer moments, data
//! stream state), then an end marker. Everything is little-endian.

use std::fs;
use std::path::Path;

use crate::corpus::Vocab;
use crate::error::{CheckpointError, DamsError, Result};
use crate::nn::{BlockConfig, DamsModel, ModelConfig};
use crate::tensor::{AdamConfig, AdamState, Real, Tensor};

pub const MAGIC: &[u8; 4] = b"DAMS";
pub const FORMAT_VERSION: u32 = 1;
const END: &[u8; 4] = b"END.";
const REAL_BYTES: u32 = std::mem::size_of::<Real>() as u32;

/// Everything needed to continue or reuse a training run.
#[derive(Clone, Debug)]
pub struct TrainingState {
    pub model: DamsModel,
    pub adam: AdamState,
    pub vocab: Vocab,
    /// Resolved run settings, echoed verbatim for reproducibility.
    pub echo: Vec<(String, String)>,
    /// Base seed of every derived random stream.
    pub seed: u64,
    /// Next step of the data stream.
    pub stream_position: u64,
}

fn model_entries(c: &ModelConfig) -> Vec<(&'static str, String)> {
    let b = &c.block;
    vec![
        ("vocab_size", c.vocab_size.to_string()),
        ("layers", b.layers.to_string()),
        ("heads", b.heads.to_string()),
        ("model_dim", b.model_dim.to_string()),
        ("ffn_dim", b.ffn_dim.to_string()),
        ("max_positions", b.max_positions.to_string()),
        ("dropout", b.dropout.to_string()),
        ("max_sentences", c.max_sentences.to_string()),
        ("init_std", c.init_std.to_string()),
    ]
}

fn config_text(state: &TrainingState) -> String {
    let mut s = String::new();
    for (k, v) in model_entries(state.model.config()) {
        s.push_str(&format!("model.{k}={v}\n"));
    }
    for (k, v) in &state.echo {
        s.push_str(&format!("run.{k}={v}\n"));
    }
    s
}

fn parse_config(text: &str) -> std::result::Result<(ModelConfig, Vec<(String, String)>), CheckpointError> {
    let mut model = std::collections::HashMap::new();
    let mut echo = Vec::new();
    for line in text.lines() {
        let (k, v) = line.split_once('=').ok_or_else(|| CheckpointError::Malformed(format!("config line {line:?}")))?;
        if let Some(k) = k.strip_prefix("model.") {
            model.insert(k.to_string(), v.to_string());
        } else if let Some(k) = k.strip_prefix("run.") {
            echo.push((k.to_string(), v.to_string()));
        } else {
            return Err(CheckpointError::Malformed(format!("config key {k:?}")));
        }
    }
    fn get<T: std::str::FromStr>(m: &std::collections::HashMap<String, String>, k: &str) -> std::result::Result<T, CheckpointError> {
        m.get(k)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| CheckpointError::Malformed(format!("missing or invalid model.{k}")))
    }
    let block = BlockConfig {
        layers: get(&model, "layers")?,
        heads: get(&model, "heads")?,
        model_dim: get(&model, "model_dim")?,
        ffn_dim: get(&model, "ffn_dim")?,
        max_positions: get(&model, "max_positions")?,
        dropout: get(&model, "dropout")?,
    };
    let mut cfg = ModelConfig::new(get(&model, "vocab_size")?, block);
    cfg.max_sentences = get(&model, "max_sentences")?;
    cfg.init_std = get(&model, "init_std")?;
    Ok((cfg, echo))
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, x: u32) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn u64(&mut self, x: u64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.0.extend_from_slice(b);
    }
    fn reals(&mut self, xs: &[Real]) {
        for x in xs {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> std::result::Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(CheckpointError::Truncated(what))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self, what: &'static str) -> std::result::Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self, what: &'static str) -> std::result::Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
    fn len(&mut self, what: &'static str) -> std::result::Result<usize, CheckpointError> {
        let n = self.u64(what)?;
        usize::try_from(n).ok().filter(|&n| n <= self.buf.len()).ok_or(CheckpointError::Truncated(what))
    }
    fn text(&mut self, what: &'static str) -> std::result::Result<String, CheckpointError> {
        let n = self.len(what)?;
        String::from_utf8(self.take(n, what)?.to_vec()).map_err(|_| CheckpointError::Malformed(format!("{what} is not UTF-8")))
    }
    fn reals(&mut self, n: usize, what: &'static str) -> std::result::Result<Vec<Real>, CheckpointError> {
        let bytes = n.checked_mul(REAL_BYTES as usize).ok_or(CheckpointError::Truncated(what))?;
        let raw = self.take(bytes, what)?;
        Ok(raw
            .chunks_exact(REAL_BYTES as usize)
            .map(|c| Real::from_le_bytes(c.try_into().expect("real width")))
            .collect())
    }
}

pub fn encode_checkpoint(state: &TrainingState) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION);
    w.u32(REAL_BYTES);
    w.bytes(config_text(state).as_bytes());
    w.bytes(state.vocab.to_lines().as_bytes());

    let store = state.model.params();
    w.u32(store.len() as u32);
    for id in store.ids() {
        let t = store.get(id);
        w.bytes(store.name(id).as_bytes());
        w.u32(t.shape().len() as u32);
        for &d in t.shape() {
            w.u64(d as u64);
        }
        w.reals(t.data());
    }

    let a = &state.adam;
    w.u64(a.step);
    w.reals(&[a.config.beta1, a.config.beta2, a.config.eps]);
    w.u32(a.m.len() as u32);
    for (m, v) in a.m.iter().zip(&a.v) {
        w.u64(m.len() as u64);
        w.reals(m);
        w.reals(v);
    }

    w.u64(state.seed);
    w.u64(state.stream_position);
    w.0.extend_from_slice(END);
    w.0
}

/// Decodes a checkpoint. With `expected`, the stored model configuration
/// must produce the same parameter shapes or loading fails.
pub fn decode_checkpoint(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<TrainingState> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(CheckpointError::VersionMismatch { found: u32::from_le_bytes(magic.try_into().expect("4")) }.into());
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch { found: version }.into());
    }
    let width = r.u32("real width")?;
    if width != REAL_BYTES {
        return Err(CheckpointError::Malformed(format!(
            "file stores {width}-byte reals, this build uses {REAL_BYTES}-byte reals"
        ))
        .into());
    }
    let (config, echo) = parse_config(&r.text("config block")?)?;
    let vocab = Vocab::from_lines(&r.text("vocabulary block")?)
        .map_err(|e| CheckpointError::Malformed(format!("vocabulary: {e}")))?;

    let mut model = DamsModel::new(config.clone(), 0).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    if let Some(exp) = expected {
        let reference = DamsModel::new(exp.clone(), 0)?;
        for id in reference.params().ids() {
            let name = reference.params().name(id);
            let want = reference.params().get(id).shape();
            let found = model.params().find(name).map(|i| model.params().get(i).shape().to_vec()).unwrap_or_default();
            if found != want {
                return Err(CheckpointError::ShapeMismatch { name: name.into(), found, expected: want.to_vec() }.into());
            }
        }
    }

    let count = r.u32("tensor count")? as usize;
    if count != model.params().len() {
        return Err(CheckpointError::Malformed(format!(
            "{count} tensors stored, the configured model has {}",
            model.params().len()
        ))
        .into());
    }
    for _ in 0..count {
        let name = r.text("tensor name")?;
        let ndims = r.u32("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(ndims.min(8));
        for _ in 0..ndims {
            shape.push(r.u64("tensor dims")? as usize);
        }
        let id = model
            .params()
            .find(&name)
            .ok_or_else(|| CheckpointError::Malformed(format!("unknown tensor {name}")))?;
        let want = model.params().get(id).shape().to_vec();
        if shape != want {
            return Err(CheckpointError::ShapeMismatch { name, found: shape, expected: want }.into());
        }
        let data = r.reals(want.iter().product(), "tensor values")?;
        model.params_mut().set(id, Tensor::new(want, data)?)?;
    }

    let step = r.u64("optimizer step")?;
    let hp = r.reals(3, "optimizer config")?;
    let n = r.u32("optimizer count")? as usize;
    if n != model.params().len() {
        return Err(CheckpointError::Malformed(format!("{n} optimizer blocks for {} tensors", model.params().len())).into());
    }
    let mut m = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for id in model.params().ids() {
        let len = r.len("optimizer block")?;
        if len != model.params().get(id).len() {
            return Err(CheckpointError::Malformed(format!("optimizer block for {} has {len} values", model.params().name(id))).into());
        }
        m.push(r.reals(len, "optimizer moments")?);
        v.push(r.reals(len, "optimizer moments")?);
    }
    let adam = AdamState { config: AdamConfig { beta1: hp[0], beta2: hp[1], eps: hp[2] }, step, m, v };

    let seed = r.u64("rng state")?;
    let stream_position = r.u64("rng state")?;
    if r.take(4, "end marker")? != END {
        return Err(CheckpointError::Malformed("bad end marker".into()).into());
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Malformed("trailing bytes after end marker".into()).into());
    }
    Ok(TrainingState { model, adam, vocab, echo, seed, stream_position })
}

pub fn save_checkpoint(state: &TrainingState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(state)).map_err(|e| DamsError::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>, expected: Option<&ModelConfig>) -> Result<TrainingState> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| DamsError::io(path, e))?;
    decode_checkpoint(&bytes, expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SPECIAL_TOKENS;

    fn state() -> TrainingState {
        let block = BlockConfig { layers: 1, heads: 2, model_dim: 8, ffn_dim: 16, max_positions: 16, dropout: 0.1 };
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(["a", "b", "c", "d"].map(String::from));
        let vocab = Vocab::from_tokens(tokens).unwrap();
        let model = DamsModel::new(ModelConfig::new(vocab.len(), block), 3).unwrap();
        let mut adam = AdamState::new(model.params(), AdamConfig::default());
        adam.step = 17;
        adam.m[0][0] = 0.25;
        adam.v[1][0] = 1e-300;
        TrainingState { model, adam, vocab, echo: vec![("seed".into(), "3".into())], seed: 3, stream_position: 17 }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let s = state();
        let bytes = encode_checkpoint(&s);
        let back = decode_checkpoint(&bytes, None).unwrap();
        assert_eq!(encode_checkpoint(&back), bytes);
        for id in s.model.params().ids() {
            assert_eq!(s.model.params().get(id), back.model.params().get(id));
        }
        assert_eq!(back.adam, s.adam);
        assert_eq!(back.vocab, s.vocab);
        assert_eq!((back.seed, back.stream_position), (3, 17));
        assert_eq!(back.echo, s.echo);
    }

    #[test]
    fn distinct_failures() {
        let bytes = encode_checkpoint(&state());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad, None), Err(DamsError::Checkpoint(CheckpointError::VersionMismatch { .. }))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(
            decode_checkpoint(&bad, None),
            Err(DamsError::Checkpoint(CheckpointError::VersionMismatch { found: 9 }))
        ));
        for cut in [2, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(decode_checkpoint(&bytes[..cut], None), Err(DamsError::Checkpoint(CheckpointError::Truncated(_)))),
                "cut at {cut}"
            );
        }
        let mut other = state().model.config().clone();
        other.block.model_dim = 16;
        assert!(matches!(
            decode_checkpoint(&bytes, Some(&other)),
            Err(DamsError::Checkpoint(CheckpointError::ShapeMismatch { .. }))
        ));
        let same = state().model.config().clone();
        decode_checkpoint(&bytes, Some(&same)).unwrap();
    }
}
