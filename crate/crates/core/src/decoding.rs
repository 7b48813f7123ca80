//! Beam search and greedy decoding over any left-to-right scorer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{KvCache, LanguageModel};
use crate::tensor::{log_sum_exp, Scalar};
use crate::tokenizer::{TokenId, EOS};

/// A model that yields next-token log-probabilities incrementally.
pub trait StepModel {
    type State: Clone;

    fn vocab(&self) -> usize;

    /// Longest total sequence (prefix and generated) the model accepts.
    fn max_len(&self) -> Option<usize> {
        None
    }

    /// Consumes `prefix`; returns the state and the log-probabilities of
    /// the next token.
    fn start(&self, prefix: &[TokenId]) -> Result<(Self::State, Vec<f64>)>;

    /// Appends `token`; returns the log-probabilities of the one after it.
    fn step(&self, state: &mut Self::State, token: TokenId) -> Result<Vec<f64>>;
}

fn log_softmax<T: Scalar>(logits: &[T]) -> Vec<f64> {
    let lse = log_sum_exp(logits).f64();
    logits.iter().map(|&z| z.f64() - lse).collect()
}

impl<T: Scalar> StepModel for LanguageModel<T> {
    type State = KvCache<T>;

    fn vocab(&self) -> usize {
        self.config.vocab
    }

    fn max_len(&self) -> Option<usize> {
        Some(self.config.max_positions)
    }

    fn start(&self, prefix: &[TokenId]) -> Result<(Self::State, Vec<f64>)> {
        let (cache, out) = self.prefill(prefix)?;
        Ok((cache, log_softmax(&out.logits)))
    }

    fn step(&self, state: &mut Self::State, token: TokenId) -> Result<Vec<f64>> {
        Ok(log_softmax(&self.step(state, token)?.logits))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub beam_width: usize,
    pub max_new_tokens: usize,
    /// Generation halts after emitting this token; `None` runs to budget.
    pub stop_token: Option<TokenId>,
    /// Rank finished hypotheses by mean instead of summed log-probability.
    #[serde(default)]
    pub length_normalization: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beam_width: 5,
            max_new_tokens: 40,
            stop_token: Some(EOS),
            length_normalization: false,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 || self.max_new_tokens == 0 {
            return Err(Error::Config("beam_width and max_new_tokens must be at least 1".into()));
        }
        Ok(())
    }

    pub fn greedy(max_new_tokens: usize, stop_token: Option<TokenId>) -> Self {
        Self {
            beam_width: 1,
            max_new_tokens,
            stop_token,
            length_normalization: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decoded {
    /// Prefix followed by the generated tokens.
    pub ids: Vec<TokenId>,
    pub prefix_len: usize,
    /// Summed log-probability of the generated tokens.
    pub log_prob: f64,
    /// Ranking score: `log_prob`, or its per-token mean when normalized.
    pub score: f64,
    /// False when the stop token never came within budget.
    pub finished: bool,
}

impl Decoded {
    /// Generated tokens, stop token included.
    pub fn generated(&self) -> &[TokenId] {
        &self.ids[self.prefix_len..]
    }

    /// Generated tokens without a trailing stop token.
    pub fn content(&self, stop: Option<TokenId>) -> &[TokenId] {
        let g = self.generated();
        match (g.last(), stop) {
            (Some(&l), Some(s)) if l == s => &g[..g.len() - 1],
            _ => g,
        }
    }
}

fn check_budget<M: StepModel>(model: &M, prefix: &[TokenId], cfg: &DecodeConfig) -> Result<()> {
    cfg.validate()?;
    if prefix.is_empty() {
        return Err(Error::Contract("decoding needs a non-empty prefix".into()));
    }
    if let Some(max) = model.max_len() {
        if prefix.len() + cfg.max_new_tokens > max {
            return Err(Error::Length {
                len: prefix.len() + cfg.max_new_tokens,
                max,
            });
        }
    }
    Ok(())
}

fn final_score(log_prob: f64, len: usize, normalize: bool) -> f64 {
    if normalize && len > 0 {
        log_prob / len as f64
    } else {
        log_prob
    }
}

/// Higher score first, then lexicographically smaller tokens.
fn better(a: (f64, &[TokenId]), b: (f64, &[TokenId])) -> std::cmp::Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

struct Live<S> {
    tokens: Vec<TokenId>,
    log_prob: f64,
    state: S,
    next: Vec<f64>,
}

struct Done {
    tokens: Vec<TokenId>,
    log_prob: f64,
    score: f64,
    finished: bool,
}

/// Beam search. Finished hypotheses leave the beam for a separate pool and
/// compete with the survivors at the end; the best finished hypothesis is
/// returned, or the best unfinished one if none finished.
pub fn beam_search<M: StepModel>(model: &M, prefix: &[TokenId], cfg: &DecodeConfig) -> Result<Decoded> {
    check_budget(model, prefix, cfg)?;
    let width = cfg.beam_width;
    let (state, next) = model.start(prefix)?;
    let mut live = vec![Live {
        tokens: Vec::new(),
        log_prob: 0.0,
        state,
        next,
    }];
    let mut done: Vec<Done> = Vec::new();

    for depth in 0..cfg.max_new_tokens {
        let mut cands: Vec<(f64, usize, TokenId)> = Vec::with_capacity(live.len() * model.vocab());
        for (h, hyp) in live.iter().enumerate() {
            for (tok, &lp) in hyp.next.iter().enumerate() {
                if lp > f64::NEG_INFINITY {
                    cands.push((hyp.log_prob + lp, h, tok as TokenId));
                }
            }
        }
        let key = |c: &(f64, usize, TokenId)| {
            let mut t = live[c.1].tokens.clone();
            t.push(c.2);
            t
        };
        cands.sort_by(|a, b| better((a.0, &key(a)), (b.0, &key(b))));
        cands.truncate(width);

        let last = depth + 1 == cfg.max_new_tokens;
        let mut next_live = Vec::with_capacity(width);
        for (lp, h, tok) in cands {
            let mut tokens = live[h].tokens.clone();
            tokens.push(tok);
            if Some(tok) == cfg.stop_token || last {
                let finished = Some(tok) == cfg.stop_token;
                done.push(Done {
                    score: final_score(lp, tokens.len(), cfg.length_normalization),
                    tokens,
                    log_prob: lp,
                    finished,
                });
            } else {
                let mut state = live[h].state.clone();
                let next = model.step(&mut state, tok)?;
                next_live.push(Live {
                    tokens,
                    log_prob: lp,
                    state,
                    next,
                });
            }
        }
        live = next_live;
        if live.is_empty() {
            break;
        }
        // Log-probabilities are at most 0, so unnormalized live scores only fall.
        if !cfg.length_normalization {
            let best_live = live.iter().map(|h| h.log_prob).fold(f64::NEG_INFINITY, f64::max);
            if done.iter().any(|d| d.finished && d.score > best_live) {
                break;
            }
        }
    }

    let pick = |finished: bool| {
        done.iter()
            .filter(|d| d.finished == finished)
            .min_by(|a, b| better((a.score, &a.tokens), (b.score, &b.tokens)))
    };
    let best = pick(true)
        .or_else(|| pick(false))
        .ok_or_else(|| Error::Contract("no token has finite probability".into()))?;
    if !best.finished {
        log::warn!(
            "beam search hit the {}-token budget before the stop token",
            cfg.max_new_tokens
        );
    }
    let mut ids = prefix.to_vec();
    ids.extend(&best.tokens);
    Ok(Decoded {
        ids,
        prefix_len: prefix.len(),
        log_prob: best.log_prob,
        score: best.score,
        finished: best.finished,
    })
}

/// Picks the most probable next token at every step (lowest id on ties).
pub fn greedy<M: StepModel>(model: &M, prefix: &[TokenId], cfg: &DecodeConfig) -> Result<Decoded> {
    check_budget(model, prefix, cfg)?;
    let (mut state, mut next) = model.start(prefix)?;
    let mut ids = prefix.to_vec();
    let mut log_prob = 0.0;
    let mut finished = false;
    for n in 0..cfg.max_new_tokens {
        let (mut tok, mut lp) = (0usize, f64::NEG_INFINITY);
        for (i, &v) in next.iter().enumerate() {
            if v > lp {
                tok = i;
                lp = v;
            }
        }
        ids.push(tok as TokenId);
        log_prob += lp;
        if Some(tok as TokenId) == cfg.stop_token {
            finished = true;
            break;
        }
        if n + 1 < cfg.max_new_tokens {
            next = model.step(&mut state, tok as TokenId)?;
        }
    }
    let len = ids.len() - prefix.len();
    Ok(Decoded {
        ids,
        prefix_len: prefix.len(),
        log_prob,
        score: final_score(log_prob, len, cfg.length_normalization),
        finished,
    })
}

/// Beam search, or greedy decoding when the width is 1.
pub fn decode<M: StepModel>(model: &M, prefix: &[TokenId], cfg: &DecodeConfig) -> Result<Decoded> {
    if cfg.beam_width == 1 {
        greedy(model, prefix, cfg)
    } else {
        beam_search(model, prefix, cfg)
    }
}

/// Next-token tables for testing decoders against exhaustive search.
pub mod tabular {
    use std::collections::HashMap;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    use super::*;

    /// Log-probabilities determined by the generated tokens alone (the
    /// prefix is ignored), drawn from a seeded random softmax per context.
    #[derive(Clone, Debug)]
    pub struct RandomTable {
        pub vocab: usize,
        pub seed: u64,
        /// Logit standard deviation; larger gives peakier distributions.
        pub temperature: f64,
    }

    impl RandomTable {
        pub fn log_probs(&self, context: &[TokenId]) -> Vec<f64> {
            let mut h: u64 = self.seed ^ 0xA076_1D64_78BD_642F;
            for &t in context {
                h = (h ^ (t as u64 + 1)).wrapping_mul(0x100_0000_01B3).rotate_left(17);
            }
            h ^= context.len() as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(h);
            let normal = Normal::new(0.0, self.temperature).expect("positive std");
            let logits: Vec<f64> = (0..self.vocab).map(|_| normal.sample(&mut rng)).collect();
            log_softmax(&logits)
        }
    }

    impl StepModel for RandomTable {
        type State = Vec<TokenId>;

        fn vocab(&self) -> usize {
            self.vocab
        }

        fn start(&self, _prefix: &[TokenId]) -> Result<(Self::State, Vec<f64>)> {
            Ok((Vec::new(), self.log_probs(&[])))
        }

        fn step(&self, state: &mut Self::State, token: TokenId) -> Result<Vec<f64>> {
            state.push(token);
            Ok(self.log_probs(state))
        }
    }

    /// Explicit probabilities per generated context; unlisted contexts are
    /// uniform.
    #[derive(Clone, Debug, Default)]
    pub struct FixedTable {
        pub vocab: usize,
        pub probs: HashMap<Vec<TokenId>, Vec<f64>>,
    }

    impl FixedTable {
        pub fn log_probs(&self, context: &[TokenId]) -> Vec<f64> {
            match self.probs.get(context) {
                Some(p) => p.iter().map(|v| v.ln()).collect(),
                None => vec![-(self.vocab as f64).ln(); self.vocab],
            }
        }
    }

    impl StepModel for FixedTable {
        type State = Vec<TokenId>;

        fn vocab(&self) -> usize {
            self.vocab
        }

        fn start(&self, _prefix: &[TokenId]) -> Result<(Self::State, Vec<f64>)> {
            Ok((Vec::new(), self.log_probs(&[])))
        }

        fn step(&self, state: &mut Self::State, token: TokenId) -> Result<Vec<f64>> {
            state.push(token);
            Ok(self.log_probs(state))
        }
    }

    /// Best continuation by full enumeration, with the decoder's rules:
    /// sequences end at the stop token or at the budget, finished ones win
    /// over unfinished ones, ties go to the lexicographically smaller.
    pub fn exhaustive_best<M: StepModel>(
        model: &M,
        prefix: &[TokenId],
        cfg: &DecodeConfig,
    ) -> Result<(Vec<TokenId>, f64)> {
        // (finished, score, tokens)
        let mut best: Option<(bool, f64, Vec<TokenId>)> = None;
        let (state, next) = model.start(prefix)?;
        let mut stack = vec![(Vec::<TokenId>::new(), 0.0f64, state, next)];
        while let Some((tokens, lp, state, next)) = stack.pop() {
            for (tok, &l) in next.iter().enumerate() {
                let tok = tok as TokenId;
                let mut seq = tokens.clone();
                seq.push(tok);
                let total = lp + l;
                let stop = Some(tok) == cfg.stop_token;
                if stop || seq.len() == cfg.max_new_tokens {
                    let score = final_score(total, seq.len(), cfg.length_normalization);
                    let replace = match &best {
                        None => true,
                        Some((bf, bs, bt)) => {
                            (stop && !bf) || (stop == *bf && (score > *bs || (score == *bs && seq < *bt)))
                        }
                    };
                    if replace {
                        best = Some((stop, score, seq));
                    }
                } else {
                    let mut st = state.clone();
                    let nx = model.step(&mut st, tok)?;
                    stack.push((seq, total, st, nx));
                }
            }
        }
        let (_, score, tokens) = best.ok_or_else(|| Error::Contract("empty vocabulary".into()))?;
        Ok((tokens, score))
    }
}

#[cfg(test)]
mod tests {
    use super::tabular::*;
    use super::*;

    fn hand_built() -> FixedTable {
        // Greedy takes 0 (p=.5) and then faces flat tails; the best path
        // starts with the less likely 1 (p=.4) and continues with p=.9.
        let mut t = FixedTable {
            vocab: 4,
            ..Default::default()
        };
        t.probs.insert(vec![], vec![0.5, 0.4, 0.05, 0.05]);
        t.probs.insert(vec![0], vec![0.25, 0.25, 0.25, 0.25]);
        t.probs.insert(vec![1], vec![0.02, 0.02, 0.9, 0.06]);
        t.probs.insert(vec![1, 2], vec![0.01, 0.01, 0.01, 0.97]);
        t
    }

    fn no_stop(width: usize) -> DecodeConfig {
        DecodeConfig {
            beam_width: width,
            max_new_tokens: 3,
            stop_token: None,
            length_normalization: false,
        }
    }

    #[test]
    fn beam_four_finds_the_enumerated_argmax() {
        let t = hand_built();
        let (best, score) = exhaustive_best(&t, &[0], &no_stop(1)).unwrap();
        assert_eq!(best, vec![1, 2, 3]);
        let b = beam_search(&t, &[9], &no_stop(4)).unwrap();
        assert_eq!(b.generated(), best.as_slice());
        assert!((b.score - score).abs() < 1e-12);
        assert_eq!(b.ids[0], 9);
        let g = greedy(&t, &[9], &no_stop(1)).unwrap();
        assert_eq!(g.generated()[0], 0);
    }

    #[test]
    fn wider_beams_never_score_lower_on_the_hand_built_table() {
        let t = hand_built();
        let scores: Vec<f64> = [1, 2, 4]
            .iter()
            .map(|&w| beam_search(&t, &[0], &no_stop(w)).unwrap().score)
            .collect();
        assert!(scores.windows(2).all(|w| w[1] >= w[0]), "{scores:?}");
    }

    #[test]
    fn stops_at_and_includes_the_stop_token() {
        let mut t = FixedTable {
            vocab: 3,
            ..Default::default()
        };
        t.probs.insert(vec![], vec![0.1, 0.8, 0.1]);
        t.probs.insert(vec![1], vec![0.1, 0.1, 0.8]);
        let cfg = DecodeConfig {
            beam_width: 3,
            max_new_tokens: 10,
            stop_token: Some(2),
            length_normalization: false,
        };
        let b = beam_search(&t, &[0], &cfg).unwrap();
        assert_eq!(b.generated(), &[1, 2]);
        assert!(b.finished);
        assert_eq!(b.content(Some(2)), &[1]);
        let g = greedy(&t, &[0], &cfg).unwrap();
        assert_eq!(g.generated(), &[1, 2]);
    }

    #[test]
    fn unfinished_budget_is_flagged_and_exact() {
        let t = RandomTable {
            vocab: 5,
            seed: 1,
            temperature: 1.0,
        };
        let cfg = DecodeConfig {
            beam_width: 2,
            max_new_tokens: 4,
            stop_token: None,
            length_normalization: false,
        };
        let b = beam_search(&t, &[0], &cfg).unwrap();
        assert!(!b.finished);
        assert_eq!(b.generated().len(), 4);
        let g = greedy(&t, &[0], &cfg).unwrap();
        assert_eq!(g.generated().len(), 4);
    }

    #[test]
    fn rejects_budget_beyond_model_length() {
        let cfg = crate::lm::LmConfig {
            layers: 1,
            hidden: 4,
            heads: 1,
            vocab: 5,
            max_positions: 6,
            dropout: 0.0,
            tie_output_to_embedding: true,
            layer_norm_eps: 1e-5,
        };
        let m = LanguageModel::<f32>::new_random(cfg, 0).unwrap();
        let dc = DecodeConfig::greedy(5, None);
        assert!(matches!(greedy(&m, &[1, 2], &dc), Err(Error::Length { .. })));
        assert_eq!(greedy(&m, &[1], &dc).unwrap().ids.len(), 6);
    }
}
