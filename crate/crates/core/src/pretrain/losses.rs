use crate::error::Result;
use crate::nn::{CriticKind, DamsModel, Encoded, HierEncoderKind, Memories, SummaryForward, TokenBatch, TokenEncoderKind};
use crate::tensor::{Real, Tape, Var};

use super::data::{GenBatch, RecBatch, SummBatch};

/// Utterance reconstruction: dialogue encoder, then the conditional decoder.
/// Returns the loss and the encoding, whose [CLS] rows feed the encoder critic.
pub fn rec_loss(model: &DamsModel, tape: &mut Tape, batch: &RecBatch) -> Result<(Var, Encoded)> {
    let tokens = TokenBatch::from_rows(&batch.noisy)?;
    let enc = model.encode_sequence(tape, TokenEncoderKind::Dialogue, &tokens)?;
    let out = model.reconstruct(tape, enc.cls, &batch.targets)?;
    Ok((out.loss, enc))
}

/// Summary-style language modeling of whole pieces through the short-text
/// encoders. Returns the loss and the short-text memories.
pub fn gen_loss(model: &DamsModel, tape: &mut Tape, batch: &GenBatch) -> Result<(Var, Memories)> {
    let (_, mem) = model.encode_documents(tape, TokenEncoderKind::ShortText, HierEncoderKind::ShortText, &batch.docs)?;
    let out = model.summary_decode(tape, &mem, &batch.targets)?;
    Ok((out.loss, mem))
}

/// News summarization through the dialogue encoder and the bridge encoder.
pub fn summ_loss(model: &DamsModel, tape: &mut Tape, batch: &SummBatch) -> Result<SummaryForward> {
    model.summarize_forward(tape, &batch.docs, &batch.summaries)
}

/// Critic terms of one step; `None` when either side had no representations.
#[derive(Clone, Copy, Debug, Default)]
pub struct CriticTerms {
    pub l_de: Option<Var>,
    pub l_dg: Option<Var>,
}

/// Balanced binary logistic loss of a critic: label 0 for `negatives`, 1 for
/// `positives`, both truncated to the smaller count. Gradient reversal sits
/// between the representations and the critic.
fn critic_loss(
    model: &DamsModel,
    tape: &mut Tape,
    which: CriticKind,
    negatives: (Var, Vec<Option<usize>>),
    positives: (Var, Vec<Option<usize>>),
) -> Result<Option<Var>> {
    let k = negatives.1.len().min(positives.1.len());
    if k == 0 {
        return Ok(None);
    }
    let mut side = |(reps, rows): (Var, Vec<Option<usize>>), label: Real| -> Result<Var> {
        let x = tape.gather_rows(reps, &rows[..k]);
        let out = model.critic_score(tape, which, x, true);
        tape.bce_with_logits(out.logits, &vec![label; k])
    };
    let a = side(negatives, 0.0)?;
    let b = side(positives, 1.0)?;
    let sum = tape.add(a, b);
    Ok(Some(tape.scale(sum, 0.5)))
}

fn all_rows(tape: &Tape, v: Var) -> Vec<Option<usize>> {
    (0..tape.tensor(v).rows()).map(Some).collect()
}

/// The encoder critic separates dialogue-utterance [CLS] vectors (label 0)
/// from news-sentence [CLS] vectors (label 1); the decoder critic separates
/// short-text memories (0) from news memories (1). Missing inputs skip a critic.
pub fn critic_losses(
    model: &DamsModel,
    tape: &mut Tape,
    dialogue_cls: Option<Var>,
    news_cls: Option<Var>,
    short_mem: Option<&Memories>,
    news_mem: Option<&Memories>,
) -> Result<CriticTerms> {
    let l_de = match (dialogue_cls, news_cls) {
        (Some(d), Some(n)) => {
            let (dr, nr) = (all_rows(tape, d), all_rows(tape, n));
            critic_loss(model, tape, CriticKind::Encoder, (d, dr), (n, nr))?
        }
        _ => None,
    };
    let l_dg = match (short_mem, news_mem) {
        (Some(s), Some(n)) => {
            critic_loss(model, tape, CriticKind::Decoder, (s.var, s.valid_rows()), (n.var, n.valid_rows()))?
        }
        _ => None,
    };
    Ok(CriticTerms { l_de, l_dg })
}
