//! Masked next-token losses over serialized source/target sequences.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::{BoundParams, LanguageModel};
use crate::autograd::{Reduction, Tape, Var};
use crate::data::serialize::SourceTarget;
use crate::error::{Error, Result};
use crate::tensor::{log_sum_exp, Scalar};
use crate::tokenizer::{Vocab, SOS};

/// Token ids with the index where the supervised target span begins.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedSequence {
    pub ids: Vec<u32>,
    pub target_start: usize,
}

impl MaskedSequence {
    /// Encodes `source ++ target` into at most `max_len` ids. The target is
    /// capped at `max_target` tokens; if still too long, source tokens
    /// after the leading `[SOS]` are dropped from the left.
    pub fn encode(vocab: &Vocab, st: &SourceTarget, max_len: usize, max_target: usize) -> Result<Self> {
        let mut source = vocab.encode(&st.source);
        let mut target = vocab.encode(&st.target);
        target.truncate(max_target.min(max_len.saturating_sub(1)));
        if target.is_empty() {
            return Err(Error::Contract("empty target span".into()));
        }
        let budget = max_len - target.len();
        if source.len() > budget {
            let keep_sos = source.first() == Some(&SOS);
            let excess = source.len() - budget;
            let start = usize::from(keep_sos);
            source.drain(start..start + excess);
            log::debug!("dropped {excess} leading source tokens to fit {max_len}");
        }
        if source.is_empty() {
            return Err(Error::Contract("empty source span".into()));
        }
        let target_start = source.len();
        source.extend(target);
        Ok(Self {
            ids: source,
            target_start,
        })
    }

    pub fn target_len(&self) -> usize {
        self.ids.len() - self.target_start
    }

    pub fn inputs(&self) -> &[u32] {
        &self.ids[..self.ids.len() - 1]
    }

    pub fn targets(&self) -> &[u32] {
        &self.ids[1..]
    }

    /// Position `p` predicts `ids[p + 1]`; on iff that id is in the target.
    pub fn loss_mask(&self) -> Vec<bool> {
        (1..self.ids.len()).map(|j| j >= self.target_start).collect()
    }
}

/// Token-mean NLL of the target span of `seq` on `tape`.
pub fn masked_nll<T: Scalar, R: Rng + ?Sized>(
    model: &LanguageModel<T>,
    tape: &mut Tape<T>,
    params: &BoundParams,
    seq: &MaskedSequence,
    train: bool,
    rng: &mut R,
) -> Result<Var> {
    let fwd = model.forward(tape, params, seq.inputs(), train, rng)?;
    tape.cross_entropy_masked(fwd.logits, seq.targets(), &seq.loss_mask(), Reduction::Mean)
}

/// Sum of per-sequence token-mean NLLs, e.g. the Effect and Cause rule
/// sequences of one iteration. No sequences gives a zero constant.
pub fn summed_nll<T: Scalar, R: Rng + ?Sized>(
    model: &LanguageModel<T>,
    tape: &mut Tape<T>,
    params: &BoundParams,
    seqs: &[MaskedSequence],
    train: bool,
    rng: &mut R,
) -> Result<Var> {
    let mut total: Option<Var> = None;
    for s in seqs {
        let l = masked_nll(model, tape, params, s, train, rng)?;
        total = Some(match total {
            Some(t) => tape.add(t, l)?,
            None => l,
        });
    }
    Ok(total.unwrap_or_else(|| tape.constant(crate::Tensor::scalar(T::zero()))))
}

/// Summed target NLL and target token count, without a tape.
pub fn sequence_nll_sum<T: Scalar>(model: &LanguageModel<T>, seq: &MaskedSequence) -> Result<(f64, usize)> {
    let (logits, _) = model.forward_eval(seq.inputs())?;
    let mut nll = 0.0;
    let mut count = 0;
    for (p, (&tgt, on)) in seq.targets().iter().zip(seq.loss_mask()).enumerate() {
        if on {
            let row = logits.row(p);
            nll += (log_sum_exp(row) - row[tgt as usize]).f64();
            count += 1;
        }
    }
    Ok((nll, count))
}

/// Token-weighted mean NLL over a corpus of sequences.
pub fn mean_token_nll<T: Scalar>(model: &LanguageModel<T>, seqs: &[MaskedSequence]) -> Result<f64> {
    use rayon::prelude::*;
    if seqs.is_empty() {
        return Err(Error::Contract("perplexity of an empty corpus".into()));
    }
    let parts: Vec<(f64, usize)> = seqs
        .par_iter()
        .map(|s| sequence_nll_sum(model, s))
        .collect::<Result<_>>()?;
    let (nll, count) = parts.iter().fold((0.0, 0), |(a, b), (x, y)| (a + x, b + y));
    if count == 0 {
        return Err(Error::Contract("perplexity over zero target tokens".into()));
    }
    Ok(nll / count as f64)
}

/// `exp` of the token-weighted mean NLL of the target spans.
pub fn perplexity<T: Scalar>(model: &LanguageModel<T>, seqs: &[MaskedSequence]) -> Result<f64> {
    Ok(mean_token_nll(model, seqs)?.exp())
}
