use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::layers::{CriticMlp, DecoderStack, EncoderStack, Init, Linear};
use crate::corpus::{BOS, CLS, EOS, PAD};
use crate::error::{DamsError, Result};
use crate::tensor::{kernels, AttentionMask, Group, ParamId, ParamStore, Real, Tape, Tensor, Var};

/// Padded batch of token sequences, row-major `batch × len`.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenBatch {
    pub ids: Vec<usize>,
    pub batch: usize,
    pub len: usize,
    pub lengths: Vec<usize>,
}

impl TokenBatch {
    pub fn from_rows(rows: &[Vec<usize>]) -> Result<Self> {
        Self::padded(rows, 0)
    }

    /// Like [`TokenBatch::from_rows`] but at least `min_len` wide.
    pub fn padded(rows: &[Vec<usize>], min_len: usize) -> Result<Self> {
        if rows.is_empty() {
            return Err(DamsError::InvalidBatch("empty batch".into()));
        }
        let len = rows.iter().map(Vec::len).max().unwrap_or(0).max(min_len);
        if len == 0 {
            return Err(DamsError::InvalidBatch("all sequences are empty".into()));
        }
        let mut ids = vec![PAD; rows.len() * len];
        for (r, row) in rows.iter().enumerate() {
            ids[r * len..r * len + row.len()].copy_from_slice(row);
        }
        Ok(TokenBatch { ids, batch: rows.len(), len, lengths: rows.iter().map(Vec::len).collect() })
    }

    pub fn valid(&self) -> Vec<bool> {
        let mut v = vec![false; self.batch * self.len];
        for (b, &l) in self.lengths.iter().enumerate() {
            v[b * self.len..b * self.len + l].fill(true);
        }
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenEncoderKind {
    /// Dialogue / article sentence encoder.
    Dialogue,
    ShortText,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HierEncoderKind {
    ShortText,
    Bridge,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CriticKind {
    /// Sees dialogue-encoder [CLS] vectors.
    Encoder,
    /// Sees summary-decoder memories.
    Decoder,
}

/// Output of a token-level encoder.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    /// `batch × d`, the hidden state at position 0.
    pub cls: Var,
    /// `batch*len × d`, every position.
    pub hidden: Var,
    pub batch: usize,
    pub len: usize,
}

/// Sentence-level vectors of a batch of documents, `batch*slots × d`.
#[derive(Clone, Debug)]
pub struct Memories {
    pub var: Var,
    pub batch: usize,
    pub slots: usize,
    pub valid: Vec<bool>,
}

impl Memories {
    fn cross_mask(&self, q_len: usize) -> AttentionMask {
        AttentionMask { batch: self.batch, q_len, k_len: self.slots, key_valid: self.valid.clone(), causal: false }
    }

    /// Row indices of the non-padded slots, in order.
    pub fn valid_rows(&self) -> Vec<Option<usize>> {
        self.valid.iter().enumerate().filter(|(_, v)| **v).map(|(i, _)| Some(i)).collect()
    }

    pub fn num_valid(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderOutput {
    /// `batch*steps × vocab`.
    pub logits: Var,
    pub loss: Var,
    pub steps: usize,
}

#[derive(Clone, Debug)]
pub struct SummaryForward {
    pub loss: Var,
    pub logits: Var,
    /// [CLS] vector of every input sentence, documents concatenated.
    pub cls: Var,
    pub memories: Memories,
}

#[derive(Clone, Copy, Debug)]
pub struct CriticOutput {
    pub logits: Var,
    pub probs: Var,
}

#[derive(Clone, Debug)]
struct HierEncoder {
    sent_pos: ParamId,
    stack: EncoderStack,
}

/// All parameter groups of the multi-source model around one shared,
/// output-tied token embedding table.
#[derive(Clone, Debug)]
pub struct DamsModel {
    config: ModelConfig,
    params: ParamStore,
    embed: ParamId,
    positions: Vec<Real>,
    dial_enc: EncoderStack,
    dial_dec: DecoderStack,
    short_enc: EncoderStack,
    short_hier: HierEncoder,
    summ_dec: DecoderStack,
    bridge_hier: HierEncoder,
    critic_enc: CriticMlp,
    critic_dec: CriticMlp,
}

impl DamsModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let b = &config.block;
        let (d, h, f, l) = (b.model_dim, b.heads, b.ffn_dim, b.layers);
        let std = config.init_std;

        macro_rules! init {
            ($group:expr) => {
                Init { store: &mut store, rng: &mut rng, std, group: $group }
            };
        }

        let embed = init!(Group::Embedding).normal("tokens", &[config.vocab_size, d]);
        let dial_enc = EncoderStack::new(&mut init!(Group::DialogueEncoder), l, d, h, f);
        let dial_dec = DecoderStack::new(&mut init!(Group::UtteranceDecoder), l, d, h, f, false);
        let short_enc = EncoderStack::new(&mut init!(Group::ShortTextEncoder), l, d, h, f);
        let short_hier = {
            let mut i = init!(Group::ShortTextHier);
            HierEncoder {
                sent_pos: i.normal("sentence_positions", &[config.max_sentences, d]),
                stack: EncoderStack::new(&mut i, l, d, h, f),
            }
        };
        let summ_dec = DecoderStack::new(&mut init!(Group::SummaryDecoder), l, d, h, f, true);
        let bridge_hier = {
            let mut i = init!(Group::BridgeHier);
            HierEncoder {
                sent_pos: i.normal("sentence_positions", &[config.max_sentences, d]),
                stack: EncoderStack::new(&mut i, l, d, h, f),
            }
        };
        let critic_enc = CriticMlp::new(&mut init!(Group::CriticEncoder), d, config.critic_hidden());
        let critic_dec = CriticMlp::new(&mut init!(Group::CriticDecoder), d, config.critic_hidden());

        Ok(DamsModel {
            positions: kernels::sinusoidal_positions(b.max_positions, d),
            config,
            params: store,
            embed,
            dial_enc,
            dial_dec,
            short_enc,
            short_hier,
            summ_dec,
            bridge_hier,
            critic_enc,
            critic_dec,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn dim(&self) -> usize {
        self.config.block.model_dim
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    /// Whether the utterance decoder owns any cross-attention parameter.
    pub fn utterance_decoder_has_cross_attention(&self) -> bool {
        self.dial_dec.has_cross_attention()
    }

    /// Mutable access to the final affine layer of a critic (weights, bias).
    pub fn critic_output_layer(&self, which: CriticKind) -> (ParamId, ParamId) {
        let Linear { w, b } = &self.critic(which).out;
        (*w, *b)
    }

    /// Training tape using this model's dropout rate.
    pub fn training_tape<'a>(&'a self, rng: &'a mut dyn rand::RngCore) -> Tape<'a> {
        Tape::training(&self.params, self.config.block.dropout, rng)
    }

    pub fn inference_tape(&self) -> Tape<'_> {
        Tape::new(&self.params)
    }

    fn critic(&self, which: CriticKind) -> &CriticMlp {
        match which {
            CriticKind::Encoder => &self.critic_enc,
            CriticKind::Decoder => &self.critic_dec,
        }
    }

    fn hier(&self, which: HierEncoderKind) -> &HierEncoder {
        match which {
            HierEncoderKind::ShortText => &self.short_hier,
            HierEncoderKind::Bridge => &self.bridge_hier,
        }
    }

    /// `embedding * sqrt(d) + sinusoid(position)` for a padded id matrix.
    fn embed_tokens(&self, tape: &mut Tape, batch: &TokenBatch) -> Result<Var> {
        let d = self.dim();
        if batch.len > self.config.block.max_positions {
            return Err(DamsError::Length {
                what: "token sequence",
                len: batch.len,
                max: self.config.block.max_positions,
            });
        }
        let table = tape.param(self.embed);
        let e = tape.embedding(table, &batch.ids)?;
        let e = tape.scale(e, (d as Real).sqrt());
        let mut pe = Vec::with_capacity(batch.batch * batch.len * d);
        for _ in 0..batch.batch {
            pe.extend_from_slice(&self.positions[..batch.len * d]);
        }
        let pe = tape.constant(Tensor::new(vec![batch.batch * batch.len, d], pe)?);
        Ok(tape.add(e, pe))
    }

    fn tied_logits(&self, tape: &mut Tape, hidden: Var) -> Var {
        let table = tape.param(self.embed);
        tape.matmul(hidden, table, true)
    }

    /// Token-level encoding of `[CLS] w1 .. wm` rows.
    pub fn encode_sequence(&self, tape: &mut Tape, which: TokenEncoderKind, batch: &TokenBatch) -> Result<Encoded> {
        for b in 0..batch.batch {
            if batch.lengths[b] == 0 || batch.ids[b * batch.len] != CLS {
                return Err(DamsError::InvalidBatch(format!("row {b} does not start with [CLS]")));
            }
        }
        let x = self.embed_tokens(tape, batch)?;
        let x = tape.dropout(x);
        let mask = AttentionMask {
            batch: batch.batch,
            q_len: batch.len,
            k_len: batch.len,
            key_valid: batch.valid(),
            causal: false,
        };
        let stack = match which {
            TokenEncoderKind::Dialogue => &self.dial_enc,
            TokenEncoderKind::ShortText => &self.short_enc,
        };
        let hidden = stack.forward(tape, x, &mask);
        let cls_rows: Vec<Option<usize>> = (0..batch.batch).map(|b| Some(b * batch.len)).collect();
        let cls = tape.gather_rows(hidden, &cls_rows);
        Ok(Encoded { cls, hidden, batch: batch.batch, len: batch.len })
    }

    /// Hidden states of the non-[CLS] positions as `batch × (len-1) × d`.
    pub fn token_vectors(&self, tape: &mut Tape, enc: &Encoded) -> Var {
        let rows: Vec<Option<usize>> = (0..enc.batch)
            .flat_map(|b| (1..enc.len).map(move |t| Some(b * enc.len + t)))
            .collect();
        let g = tape.gather_rows(enc.hidden, &rows);
        tape.reshape(g, &[enc.batch, enc.len - 1, self.dim()])
    }

    /// Teacher-forced decoder inputs `[BOS] y`, outputs `y [EOS]` and the
    /// per-position weights giving a per-sequence mean averaged over the batch.
    fn shifted_targets(targets: &[Vec<usize>]) -> Result<(TokenBatch, Vec<usize>, Vec<Real>)> {
        if targets.is_empty() {
            return Err(DamsError::InvalidBatch("no targets".into()));
        }
        if let Some(i) = targets.iter().position(Vec::is_empty) {
            return Err(DamsError::InvalidBatch(format!("target {i} is empty")));
        }
        let inputs: Vec<Vec<usize>> = targets
            .iter()
            .map(|t| std::iter::once(BOS).chain(t.iter().copied()).collect())
            .collect();
        let batch = TokenBatch::from_rows(&inputs)?;
        let mut outs = vec![PAD; batch.batch * batch.len];
        let mut weights = vec![0.0; batch.batch * batch.len];
        let nb = targets.len() as Real;
        for (b, t) in targets.iter().enumerate() {
            let row = b * batch.len;
            outs[row..row + t.len()].copy_from_slice(t);
            outs[row + t.len()] = EOS;
            let w = 1.0 / ((t.len() + 1) as Real * nb);
            weights[row..row + t.len() + 1].fill(w);
        }
        Ok((batch, outs, weights))
    }

    fn causal_mask(batch: &TokenBatch) -> AttentionMask {
        AttentionMask {
            batch: batch.batch,
            q_len: batch.len,
            k_len: batch.len,
            key_valid: batch.valid(),
            causal: true,
        }
    }

    /// Utterance decoder: each input embedding gets the utterance's [CLS]
    /// vector added; there is no cross attention. `cls` is `batch × d`.
    pub fn reconstruct(&self, tape: &mut Tape, cls: Var, targets: &[Vec<usize>]) -> Result<DecoderOutput> {
        let (batch, outs, weights) = Self::shifted_targets(targets)?;
        if tape.tensor(cls).rows() != batch.batch {
            return Err(DamsError::Usage("one [CLS] vector per target is required".into()));
        }
        let x = self.embed_tokens(tape, &batch)?;
        let cond_rows: Vec<Option<usize>> =
            (0..batch.batch).flat_map(|b| std::iter::repeat_n(Some(b), batch.len)).collect();
        let cond = tape.gather_rows(cls, &cond_rows);
        let x = tape.add(x, cond);
        let x = tape.dropout(x);
        let h = self.dial_dec.forward(tape, x, &Self::causal_mask(&batch), None);
        let logits = self.tied_logits(tape, h);
        let loss = tape.weighted_nll(logits, &outs, &weights)?;
        Ok(DecoderOutput { logits, loss, steps: batch.len })
    }

    /// Packs per-document sentence vectors (documents concatenated, `counts`
    /// sentences each) into a padded `batch*slots × d` matrix.
    pub fn group_sentences(&self, tape: &mut Tape, sentence_vecs: Var, counts: &[usize]) -> Result<(Var, usize, Vec<bool>)> {
        let slots = counts.iter().copied().max().unwrap_or(0);
        if slots == 0 {
            return Err(DamsError::InvalidBatch("documents without sentences".into()));
        }
        let mut index = Vec::with_capacity(counts.len() * slots);
        let mut valid = Vec::with_capacity(counts.len() * slots);
        let mut next = 0;
        for &c in counts {
            for s in 0..slots {
                if s < c {
                    index.push(Some(next + s));
                    valid.push(true);
                } else {
                    index.push(None);
                    valid.push(false);
                }
            }
            next += c;
        }
        Ok((tape.gather_rows(sentence_vecs, &index), slots, valid))
    }

    /// Sentence-level encoder with learned sentence positions.
    pub fn hier_encode(
        &self,
        tape: &mut Tape,
        which: HierEncoderKind,
        sentence_vecs: Var,
        batch: usize,
        slots: usize,
        valid: Vec<bool>,
    ) -> Result<Memories> {
        if slots == 0 {
            return Err(DamsError::InvalidBatch("no sentences".into()));
        }
        if slots > self.config.max_sentences {
            return Err(DamsError::Length { what: "sentence sequence", len: slots, max: self.config.max_sentences });
        }
        if (0..batch).any(|b| !valid[b * slots..(b + 1) * slots].iter().any(|v| *v)) {
            return Err(DamsError::InvalidBatch("a document has no sentences".into()));
        }
        let enc = self.hier(which);
        let table = tape.param(enc.sent_pos);
        let pos_ids: Vec<usize> = (0..batch).flat_map(|_| 0..slots).collect();
        let pos = tape.embedding(table, &pos_ids)?;
        let x = tape.add(sentence_vecs, pos);
        let x = tape.dropout(x);
        let mask = AttentionMask { batch, q_len: slots, k_len: slots, key_valid: valid.clone(), causal: false };
        let var = enc.stack.forward(tape, x, &mask);
        Ok(Memories { var, batch, slots, valid })
    }

    /// Summary decoder with cross attention over sentence memories.
    pub fn summary_decode(&self, tape: &mut Tape, memories: &Memories, targets: &[Vec<usize>]) -> Result<DecoderOutput> {
        if memories.slots == 0 || memories.num_valid() == 0 {
            return Err(DamsError::InvalidBatch("empty memories".into()));
        }
        if targets.len() != memories.batch {
            return Err(DamsError::Usage(format!(
                "{} targets for {} memory rows",
                targets.len(),
                memories.batch
            )));
        }
        let (batch, outs, weights) = Self::shifted_targets(targets)?;
        let x = self.embed_tokens(tape, &batch)?;
        let x = tape.dropout(x);
        let cross = memories.cross_mask(batch.len);
        let h = self.summ_dec.forward(tape, x, &Self::causal_mask(&batch), Some((memories.var, &cross)));
        let logits = self.tied_logits(tape, h);
        let loss = tape.weighted_nll(logits, &outs, &weights)?;
        Ok(DecoderOutput { logits, loss, steps: batch.len })
    }

    /// Encodes every sentence of every document with a token encoder, then
    /// fuses each document's [CLS] vectors with a hierarchical encoder.
    pub fn encode_documents(
        &self,
        tape: &mut Tape,
        token_encoder: TokenEncoderKind,
        hier: HierEncoderKind,
        docs: &[Vec<Vec<usize>>],
    ) -> Result<(Encoded, Memories)> {
        if docs.is_empty() {
            return Err(DamsError::InvalidBatch("no documents".into()));
        }
        if let Some(i) = docs.iter().position(Vec::is_empty) {
            return Err(DamsError::InvalidBatch(format!("document {i} has no sentences")));
        }
        let flat: Vec<Vec<usize>> = docs.iter().flatten().cloned().collect();
        let batch = TokenBatch::from_rows(&flat)?;
        let enc = self.encode_sequence(tape, token_encoder, &batch)?;
        let counts: Vec<usize> = docs.iter().map(Vec::len).collect();
        let (grouped, slots, valid) = self.group_sentences(tape, enc.cls, &counts)?;
        let mem = self.hier_encode(tape, hier, grouped, docs.len(), slots, valid)?;
        Ok((enc, mem))
    }

    /// Dialogue encoder → bridge encoder → summary decoder.
    pub fn summarize_forward(&self, tape: &mut Tape, docs: &[Vec<Vec<usize>>], summaries: &[Vec<usize>]) -> Result<SummaryForward> {
        let (enc, memories) =
            self.encode_documents(tape, TokenEncoderKind::Dialogue, HierEncoderKind::Bridge, docs)?;
        let out = self.summary_decode(tape, &memories, summaries)?;
        Ok(SummaryForward { loss: out.loss, logits: out.logits, cls: enc.cls, memories })
    }

    /// Domain probability of each row of `reps`. With `apply_reversal` a
    /// gradient-reversal node sits between the representations and the MLP.
    pub fn critic_score(&self, tape: &mut Tape, which: CriticKind, reps: Var, apply_reversal: bool) -> CriticOutput {
        let x = if apply_reversal { tape.grad_reverse(reps) } else { reps };
        let logits = self.critic(which).logits(tape, x);
        let probs = tape.sigmoid(logits);
        CriticOutput { logits, probs }
    }

    /// Log-probabilities of the next summary token after each prefix, all
    /// prefixes conditioned on the same `slots × d` memory of one document.
    pub fn next_token_logprobs(&self, memory: &Tensor, prefixes: &[Vec<usize>]) -> Result<Vec<Vec<Real>>> {
        let slots = memory.rows();
        if slots == 0 {
            return Err(DamsError::InvalidBatch("empty memories".into()));
        }
        let n = prefixes.len();
        let mut tape = self.inference_tape();
        let inputs: Vec<Vec<usize>> =
            prefixes.iter().map(|p| std::iter::once(BOS).chain(p.iter().copied()).collect()).collect();
        let batch = TokenBatch::from_rows(&inputs)?;
        let mut mem_data = Vec::with_capacity(n * memory.len());
        for _ in 0..n {
            mem_data.extend_from_slice(memory.data());
        }
        let mem = tape.constant(Tensor::new(vec![n * slots, self.dim()], mem_data)?);
        let memories = Memories { var: mem, batch: n, slots, valid: vec![true; n * slots] };
        let x = self.embed_tokens(&mut tape, &batch)?;
        let cross = memories.cross_mask(batch.len);
        let h = self.summ_dec.forward(&mut tape, x, &Self::causal_mask(&batch), Some((memories.var, &cross)));
        let last: Vec<Option<usize>> =
            (0..n).map(|b| Some(b * batch.len + batch.lengths[b] - 1)).collect();
        let h = tape.gather_rows(h, &last);
        let logits = self.tied_logits(&mut tape, h);
        let t = tape.tensor(logits);
        Ok((0..n).map(|r| kernels::log_softmax(t.row(r))).collect())
    }

    /// Inference-mode memories (`slots × d`) for one document.
    pub fn document_memory(&self, sentences: &[Vec<usize>]) -> Result<Tensor> {
        let mut tape = self.inference_tape();
        let (_, mem) = self.encode_documents(
            &mut tape,
            TokenEncoderKind::Dialogue,
            HierEncoderKind::Bridge,
            &[sentences.to_vec()],
        )?;
        Ok(tape.tensor(mem.var).clone())
    }

    /// Inference-mode dialogue-encoder [CLS] vectors, one row per sequence.
    pub fn cls_vectors(&self, sequences: &[Vec<usize>]) -> Result<Tensor> {
        let mut tape = self.inference_tape();
        let batch = TokenBatch::from_rows(sequences)?;
        let enc = self.encode_sequence(&mut tape, TokenEncoderKind::Dialogue, &batch)?;
        Ok(tape.tensor(enc.cls).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::BlockConfig;
    use crate::tensor::Gradients;

    const V: usize = 50;

    fn tiny() -> DamsModel {
        let block = BlockConfig { layers: 2, heads: 4, model_dim: 16, ffn_dim: 32, max_positions: 32, dropout: 0.0 };
        DamsModel::new(ModelConfig::new(V, block), 11).unwrap()
    }

    fn row(tokens: &[usize]) -> Vec<usize> {
        std::iter::once(CLS).chain(tokens.iter().copied()).collect()
    }

    fn max_diff(a: &[Real], b: &[Real]) -> Real {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, Real::max)
    }

    fn cls_of(m: &DamsModel, rows: &[Vec<usize>], min_len: usize) -> Tensor {
        let mut tape = m.inference_tape();
        let b = TokenBatch::padded(rows, min_len).unwrap();
        let enc = m.encode_sequence(&mut tape, TokenEncoderKind::Dialogue, &b).unwrap();
        tape.tensor(enc.cls).clone()
    }

    #[test]
    fn encoder_shapes() {
        let m = tiny();
        let mut tape = m.inference_tape();
        let b = TokenBatch::from_rows(&[row(&[6, 7, 8, 9, 10, 11, 12]), row(&[13, 14])]).unwrap();
        let enc = m.encode_sequence(&mut tape, TokenEncoderKind::Dialogue, &b).unwrap();
        assert_eq!(tape.shape(enc.cls), &[2, 16]);
        let toks = m.token_vectors(&mut tape, &enc);
        assert_eq!(tape.shape(toks), &[2, 7, 16]);
    }

    #[test]
    fn padding_does_not_leak_into_encodings() {
        let m = tiny();
        let r = row(&[6, 7, 8]);
        let a = cls_of(&m, &[r.clone()], 0);
        let b = cls_of(&m, &[r.clone()], r.len() + 5);
        assert!(max_diff(a.data(), b.data()) <= 1e-9);
        let twice = cls_of(&m, &[r.clone(), r], 0);
        assert_eq!(twice.row(0), twice.row(1));
    }

    #[test]
    fn rows_must_start_with_cls_and_fit() {
        let m = tiny();
        let mut tape = m.inference_tape();
        let b = TokenBatch::from_rows(&[vec![7, 8]]).unwrap();
        assert!(matches!(m.encode_sequence(&mut tape, TokenEncoderKind::Dialogue, &b), Err(DamsError::InvalidBatch(_))));
        let long = row(&vec![7; 40]);
        let b = TokenBatch::from_rows(&[long]).unwrap();
        assert!(matches!(m.encode_sequence(&mut tape, TokenEncoderKind::ShortText, &b), Err(DamsError::Length { .. })));
    }

    fn reconstruct_logits(m: &DamsModel, cls: Tensor, target: &[usize]) -> Tensor {
        let mut tape = m.inference_tape();
        let c = tape.constant(cls);
        let out = m.reconstruct(&mut tape, c, &[target.to_vec()]).unwrap();
        tape.tensor(out.logits).clone()
    }

    #[test]
    fn utterance_decoder_is_causal_and_conditioned() {
        let m = tiny();
        assert!(!m.utterance_decoder_has_cross_attention());
        let cls = cls_of(&m, &[row(&[6, 7])], 0);
        let target = [9, 10, 11, 12, 13];
        let base = reconstruct_logits(&m, cls.clone(), &target);
        assert_eq!(base.shape(), &[6, V]);
        for t in 0..target.len() {
            let mut changed = target;
            changed[t] = 40;
            let other = reconstruct_logits(&m, cls.clone(), &changed);
            // logits at position p predict target[p]; target[t] is input at t+1
            let keep = (t + 1) * V;
            assert!(max_diff(&base.data()[..keep], &other.data()[..keep]) <= 1e-9, "position {t}");
            assert!(max_diff(&base.data()[keep..], &other.data()[keep..]) > 0.0);
        }
        let cls2 = cls_of(&m, &[row(&[20, 21, 22])], 0);
        let other = reconstruct_logits(&m, cls2, &target);
        assert!(max_diff(&base.data()[..V], &other.data()[..V]) > 0.0);
    }

    #[test]
    fn empty_target_is_invalid() {
        let m = tiny();
        let mut tape = m.inference_tape();
        let c = tape.constant(Tensor::zeros(&[1, 16]));
        assert!(matches!(m.reconstruct(&mut tape, c, &[vec![]]), Err(DamsError::InvalidBatch(_))));
    }

    fn hier(m: &DamsModel, vecs: &Tensor, slots: usize, valid: Vec<bool>) -> Tensor {
        let mut tape = m.inference_tape();
        let v = tape.constant(vecs.clone());
        let mem = m.hier_encode(&mut tape, HierEncoderKind::Bridge, v, 1, slots, valid).unwrap();
        tape.tensor(mem.var).clone()
    }

    fn random_rows(n: usize, seed: u64) -> Tensor {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(vec![n, 16], (0..n * 16).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn hierarchical_encoder_positions_and_padding() {
        let m = tiny();
        let one = hier(&m, &random_rows(1, 1), 1, vec![true]);
        assert_eq!(one.shape(), &[1, 16]);
        assert!(one.all_finite());

        let x = random_rows(3, 2);
        let base = hier(&m, &x, 3, vec![true; 3]);
        let mut swapped = x.clone();
        let (r0, r1) = (x.row(0).to_vec(), x.row(1).to_vec());
        swapped.data_mut()[..16].copy_from_slice(&r1);
        swapped.data_mut()[16..32].copy_from_slice(&r0);
        let out = hier(&m, &swapped, 3, vec![true; 3]);
        // swapping inputs does not merely swap outputs
        assert!(max_diff(base.row(0), out.row(1)) > 1e-6);

        let mut padded = x.data().to_vec();
        padded.extend(random_rows(2, 3).data());
        let padded = Tensor::new(vec![5, 16], padded).unwrap();
        let out = hier(&m, &padded, 5, vec![true, true, true, false, false]);
        assert!(max_diff(base.data(), &out.data()[..48]) <= 1e-9);

        let mut tape = m.inference_tape();
        let v = tape.constant(random_rows(25, 4));
        assert!(matches!(
            m.hier_encode(&mut tape, HierEncoderKind::ShortText, v, 1, 25, vec![true; 25]),
            Err(DamsError::Length { .. })
        ));
    }

    fn summary_logits(m: &DamsModel, mem: &Tensor, target: &[usize]) -> Tensor {
        let mut tape = m.inference_tape();
        let var = tape.constant(mem.clone());
        let memories = Memories { var, batch: 1, slots: mem.rows(), valid: vec![true; mem.rows()] };
        let out = m.summary_decode(&mut tape, &memories, &[target.to_vec()]).unwrap();
        tape.tensor(out.logits).clone()
    }

    #[test]
    fn summary_decoder_is_causal_and_reads_memory() {
        let m = tiny();
        let mem = random_rows(3, 5);
        let target = [6, 7, 8, 9, 10, 11, 12, 13];
        let base = summary_logits(&m, &mem, &target);
        assert_eq!(base.shape(), &[9, V]);
        let mut changed = target;
        changed[4] = 30;
        let other = summary_logits(&m, &mem, &changed);
        assert!(max_diff(&base.data()[..5 * V], &other.data()[..5 * V]) <= 1e-9);

        let mut zeroed = mem.clone();
        zeroed.data_mut()[16..32].fill(0.0);
        let other = summary_logits(&m, &zeroed, &target);
        assert!(max_diff(base.data(), other.data()) > 0.0);

        let mut tape = m.inference_tape();
        let var = tape.constant(Tensor::zeros(&[2, 16]));
        let none = Memories { var, batch: 1, slots: 2, valid: vec![false, false] };
        assert!(matches!(m.summary_decode(&mut tape, &none, &[vec![6]]), Err(DamsError::InvalidBatch(_))));
    }

    fn reached(m: &DamsModel, g: &Gradients) -> Vec<Group> {
        Group::ALL.into_iter().filter(|&gr| g.group_reached(m.params(), gr)).collect()
    }

    #[test]
    fn summarize_forward_composes_and_reaches_its_groups() {
        let m = tiny();
        let docs = vec![vec![row(&[6, 7, 8]), row(&[9])]];
        let summary = vec![vec![10, 11]];
        let mut tape = m.inference_tape();
        let fwd = m.summarize_forward(&mut tape, &docs, &summary).unwrap();
        let loss = tape.scalar(fwd.loss);
        assert!(loss.is_finite());

        let mut t2 = m.inference_tape();
        let b = TokenBatch::from_rows(&docs[0]).unwrap();
        let enc = m.encode_sequence(&mut t2, TokenEncoderKind::Dialogue, &b).unwrap();
        let (g, slots, valid) = m.group_sentences(&mut t2, enc.cls, &[2]).unwrap();
        let mem = m.hier_encode(&mut t2, HierEncoderKind::Bridge, g, 1, slots, valid).unwrap();
        let out = m.summary_decode(&mut t2, &mem, &summary).unwrap();
        assert!((t2.scalar(out.loss) - loss).abs() <= 1e-12);

        let grads = tape.backward(fwd.loss).unwrap();
        assert_eq!(
            reached(&m, &grads),
            [Group::Embedding, Group::DialogueEncoder, Group::SummaryDecoder, Group::BridgeHier]
        );

        let mut tape = m.inference_tape();
        let minimal = m.summarize_forward(&mut tape, &[vec![row(&[6])]], &[vec![7]]).unwrap();
        assert!(tape.scalar(minimal.loss).is_finite());
    }

    #[test]
    fn critic_with_zero_output_layer_is_undecided() {
        let mut m = tiny();
        let (w, b) = m.critic_output_layer(CriticKind::Encoder);
        let shape = m.params().get(w).shape().to_vec();
        m.params_mut().set(w, Tensor::zeros(&shape)).unwrap();
        m.params_mut().set(b, Tensor::zeros(&[1])).unwrap();
        let mut tape = m.inference_tape();
        let reps = tape.constant(random_rows(4, 6));
        let out = m.critic_score(&mut tape, CriticKind::Encoder, reps, false);
        assert!(tape.value(out.probs).iter().all(|&p| p == 0.5));
        let loss = tape.bce_with_logits(out.logits, &[0.0, 1.0, 0.0, 1.0]).unwrap();
        assert!((tape.scalar(loss) - std::f64::consts::LN_2 as Real).abs() < 1e-12);
    }

    #[test]
    fn critic_probabilities_are_open_unit_interval() {
        let m = tiny();
        let mut tape = m.inference_tape();
        let mut big = random_rows(3, 7);
        big.data_mut().iter_mut().for_each(|x| *x *= 10.0);
        let reps = tape.constant(big);
        let out = m.critic_score(&mut tape, CriticKind::Decoder, reps, false);
        assert!(tape.value(out.probs).iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn reversal_flips_upstream_gradients_only() {
        let m = tiny();
        let rows = vec![row(&[6, 7]), row(&[8, 9, 10])];
        let run = |reverse: bool| {
            let mut tape = m.inference_tape();
            let b = TokenBatch::from_rows(&rows).unwrap();
            let enc = m.encode_sequence(&mut tape, TokenEncoderKind::Dialogue, &b).unwrap();
            let out = m.critic_score(&mut tape, CriticKind::Encoder, enc.cls, reverse);
            let loss = tape.bce_with_logits(out.logits, &[0.0, 1.0]).unwrap();
            tape.backward(loss).unwrap()
        };
        let (plain, rev) = (run(false), run(true));
        for id in m.params().ids() {
            let (a, b) = (plain.get(id, m.params()), rev.get(id, m.params()));
            match m.params().group(id) {
                Group::CriticEncoder => assert_eq!(a, b),
                Group::DialogueEncoder | Group::Embedding => {
                    for (x, y) in a.data().iter().zip(b.data()) {
                        assert_eq!(*x, -*y);
                    }
                }
                _ => assert!(a.data().iter().all(|&x| x == 0.0)),
            }
        }
    }
}
