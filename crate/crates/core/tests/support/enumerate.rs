//! Brute-force decoding oracle: scores every token string up to the budget.

use coins_core::decoding::{DecodeConfig, StepModel};
use coins_core::{Result, TokenId};

/// Summed log-probability of `tokens` after `prefix`.
pub fn sequence_log_prob<M: StepModel>(model: &M, prefix: &[TokenId], tokens: &[TokenId]) -> Result<f64> {
    let (mut state, mut next) = model.start(prefix)?;
    let mut total = 0.0;
    for (k, &t) in tokens.iter().enumerate() {
        total += next[t as usize];
        if k + 1 < tokens.len() {
            next = model.step(&mut state, t)?;
        }
    }
    Ok(total)
}

/// Every complete output: strings that end at their first stop token, or
/// stop-free strings of exactly `max_new` tokens.
pub fn outputs(vocab: usize, max_new: usize, stop: Option<TokenId>) -> Vec<Vec<TokenId>> {
    let mut out = Vec::new();
    for len in 1..=max_new {
        let total = vocab.pow(len as u32);
        for code in 0..total {
            let mut c = code;
            let seq: Vec<TokenId> = (0..len)
                .map(|_| {
                    let t = (c % vocab) as TokenId;
                    c /= vocab;
                    t
                })
                .collect();
            let stops = seq.iter().filter(|&&t| Some(t) == stop).count();
            let ends_with_stop = stop.is_some() && seq.last().copied() == stop;
            let valid = if ends_with_stop {
                stops == 1
            } else {
                stops == 0 && len == max_new
            };
            if valid {
                out.push(seq);
            }
        }
    }
    out
}

/// Argmax with the decoder's ranking: finished outputs first, then score,
/// then the lexicographically smaller string.
pub fn argmax<M: StepModel>(model: &M, prefix: &[TokenId], cfg: &DecodeConfig) -> Result<(Vec<TokenId>, f64)> {
    let mut scored = Vec::new();
    for seq in outputs(model.vocab(), cfg.max_new_tokens, cfg.stop_token) {
        let lp = sequence_log_prob(model, prefix, &seq)?;
        let score = if cfg.length_normalization {
            lp / seq.len() as f64
        } else {
            lp
        };
        let finished = cfg.stop_token.is_some() && seq.last().copied() == cfg.stop_token;
        scored.push((finished, score, seq));
    }
    scored.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.total_cmp(&a.1)).then_with(|| a.2.cmp(&b.2)));
    let (_, score, seq) = scored.into_iter().next().expect("non-empty vocabulary");
    Ok((seq, score))
}
