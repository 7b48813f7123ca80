//! The recursive completion loop.
//!
//! Starting from `s_1 s_2 [SEP] s_n`, each iteration `i = 2..=n-2` asks the
//! rule generator for Effect rules of the latest sentence and Cause rules
//! of the ending, joins them, has the sentence generator write `s_{i+1}`
//! from the rules and the context, and inserts it before the gap.

pub mod memory;
pub mod trace;
pub mod training;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use memory::{MemoryBlock, RuleMemory};
pub use trace::{GenerationTrace, TraceEntry, TraceSummary};
pub use training::{
    baseline_sequence, csi_sequences, enrich_with_silver, joint_item, rule_sequences, seg_joint_item, seg_sequence,
    sentence_sequences, SequenceLimits,
};

use crate::data::rules::RelationType;
use crate::data::serialize::{csi_prompt, join_rules, sentence_source, split_rules, SentenceInput};
use crate::data::story::StoryState;
use crate::data::tasks::{NscExample, SilverPair};
use crate::decoding::{decode, DecodeConfig};
use crate::error::{Error, Result};
use crate::lm::LanguageModel;
use crate::tensor::Scalar;
use crate::tokenizer::{TokenId, Vocab, EOS, SOS};

/// What the controller feeds each model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    /// Decoded rules and the full incomplete story.
    #[default]
    Full,
    /// Provided rules instead of decoded ones.
    Oracle,
    /// Decoded rules only.
    IrOnly,
    /// Story prefix only: no rules, no ending.
    NoIrWoSe,
    /// Decoded rules and the story prefix, no ending.
    IrWoSe,
    /// One step of ending generation from four sentences.
    Seg,
}

impl RunMode {
    pub fn sentence_input(self) -> SentenceInput {
        match self {
            RunMode::Full | RunMode::Oracle => SentenceInput::Full,
            RunMode::IrOnly => SentenceInput::RulesOnly,
            RunMode::NoIrWoSe => SentenceInput::PrefixOnly,
            RunMode::IrWoSe | RunMode::Seg => SentenceInput::RulesAndPrefix,
        }
    }

    pub fn decodes_rules(self) -> bool {
        !matches!(self, RunMode::Oracle | RunMode::NoIrWoSe)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub rule_decode: DecodeConfig,
    pub sentence_decode: DecodeConfig,
    /// Token budget of the joined rule block.
    pub max_rule_tokens: usize,
    /// Decode Effect and Cause rules for every prefix sentence as well.
    #[serde(default)]
    pub all_sentences: bool,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            rule_decode: DecodeConfig {
                max_new_tokens: 48,
                ..DecodeConfig::default()
            },
            sentence_decode: DecodeConfig {
                max_new_tokens: 24,
                ..DecodeConfig::default()
            },
            max_rule_tokens: 96,
            all_sentences: false,
        }
    }
}

/// The two models and their shared vocabulary. The rule generator may be
/// absent for modes that never decode rules.
#[derive(Clone, Copy)]
pub struct Models<'a, T> {
    pub vocab: &'a Vocab,
    pub csi: Option<&'a LanguageModel<T>>,
    pub sentence: &'a LanguageModel<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub story_id: String,
    pub generated: Vec<String>,
    /// Prefix, generated sentences and ending in positional order.
    pub story: Vec<String>,
    pub memory: RuleMemory,
    pub trace: GenerationTrace,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RuleDecode {
    pub rules: Vec<String>,
    pub score: f64,
    pub input: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SentenceDecode {
    pub sentence: String,
    pub score: f64,
    pub finished: bool,
    pub input: String,
}

/// Drops tokens after a leading `[SOS]` until `ids` leaves room for
/// `reserve` more positions within `max_len`.
pub fn fit_left(mut ids: Vec<TokenId>, reserve: usize, max_len: usize) -> Result<Vec<TokenId>> {
    let budget = max_len.checked_sub(reserve).filter(|&b| b > 1).ok_or(Error::Length {
        len: reserve + 2,
        max: max_len,
    })?;
    if ids.len() > budget {
        let start = usize::from(ids.first() == Some(&SOS));
        let excess = ids.len() - budget;
        ids.drain(start..start + excess);
    }
    Ok(ids)
}

fn decode_text<T: Scalar>(
    model: &LanguageModel<T>,
    vocab: &Vocab,
    prompt: Vec<TokenId>,
    cfg: &DecodeConfig,
) -> Result<(String, f64, bool)> {
    let max_pos = model.config.max_positions;
    let reserve = cfg.max_new_tokens.min(max_pos.saturating_sub(2));
    let prompt = fit_left(prompt, reserve, max_pos)?;
    let cfg = DecodeConfig {
        max_new_tokens: reserve,
        ..cfg.clone()
    };
    let out = decode(model, &prompt, &cfg)?;
    Ok((vocab.decode(out.content(cfg.stop_token)), out.score, out.finished))
}

/// Decodes the rule generator on `(context, selected, relation)` and splits
/// the output on `[SEP]`.
pub fn gen_inference_rules<T: Scalar>(
    csi: &LanguageModel<T>,
    vocab: &Vocab,
    context: &str,
    selected: &str,
    relation: RelationType,
    cfg: &DecodeConfig,
) -> Result<RuleDecode> {
    let input = csi_prompt(context, selected, relation);
    let (text, score, _) = decode_text(csi, vocab, vocab.encode(&input), cfg)?;
    let rules = split_rules(&text);
    if rules.is_empty() {
        log::info!("empty {relation:?} rule bundle for {selected:?}");
    }
    Ok(RuleDecode { rules, score, input })
}

/// Effect rules first, then Cause rules, keeping whole rules while the
/// `[SEP]`-joined block fits in `max_tokens`.
pub fn concat_rules(effect: &[String], cause: &[String], vocab: &Vocab, max_tokens: usize) -> Vec<String> {
    let mut out = Vec::new();
    let mut used = 0;
    for r in effect.iter().chain(cause) {
        let cost = vocab.encode(r).len() + usize::from(!out.is_empty());
        if used + cost > max_tokens {
            break;
        }
        used += cost;
        out.push(r.clone());
    }
    out
}

/// Decodes the sentence generator; leading rules are dropped first when
/// the input is too long.
pub fn gen_next_sentence<T: Scalar>(
    sentence: &LanguageModel<T>,
    vocab: &Vocab,
    rules: &[String],
    state: &StoryState,
    input: SentenceInput,
    cfg: &DecodeConfig,
) -> Result<SentenceDecode> {
    let max_pos = sentence.config.max_positions;
    let reserve = cfg.max_new_tokens.min(max_pos.saturating_sub(2));
    let mut kept = rules;
    let mut src = sentence_source(kept, state, input);
    while !kept.is_empty() && vocab.encode(&src).len() + reserve > max_pos {
        kept = &kept[1..];
        src = sentence_source(kept, state, input);
    }
    let (text, score, finished) = decode_text(sentence, vocab, vocab.encode(&src), cfg)?;
    if text.is_empty() {
        log::warn!("empty sentence decoded");
    }
    Ok(SentenceDecode {
        sentence: text,
        score,
        finished,
        input: src,
    })
}

/// Final hidden states of the rule tokens of `[SOS] I_i`, at most
/// `max_tokens` rows.
pub fn encode_rules<T: Scalar>(
    model: &LanguageModel<T>,
    vocab: &Vocab,
    rules: &[String],
    max_tokens: usize,
) -> Result<Vec<f64>> {
    let mut ids = vocab.encode(&join_rules(rules));
    ids.truncate(max_tokens.min(model.config.max_positions.saturating_sub(1)));
    let mut out = Vec::with_capacity(ids.len() * model.config.hidden);
    if ids.is_empty() {
        return Ok(out);
    }
    let mut cache = model.new_cache();
    model.step(&mut cache, SOS)?;
    for id in ids {
        let o = model.step(&mut cache, id)?;
        out.extend(o.hidden.iter().map(|v| v.f64()));
    }
    Ok(out)
}

struct Iteration {
    entry: TraceEntry,
    memory_rows: Vec<f64>,
}

fn rules_for<T: Scalar>(
    models: &Models<'_, T>,
    state: &StoryState,
    context: &str,
    relation: RelationType,
    cfg: &ControllerConfig,
) -> Result<(Vec<String>, Option<f64>, Option<String>)> {
    let csi = models
        .csi
        .ok_or_else(|| Error::Config("this mode needs a rule generator checkpoint".into()))?;
    let selected: Vec<&str> = match (relation, cfg.all_sentences) {
        (RelationType::Effect, false) => vec![state.current()],
        (RelationType::Effect, true) => state.prefix.iter().map(String::as_str).collect(),
        (RelationType::Cause, false) => vec![state.ending.as_str()],
        (RelationType::Cause, true) => state
            .prefix
            .iter()
            .map(String::as_str)
            .chain([state.ending.as_str()])
            .filter(|s| !s.is_empty())
            .collect(),
    };
    let mut rules = Vec::new();
    let mut score = 0.0;
    let mut inputs = Vec::new();
    for s in selected {
        let d = gen_inference_rules(csi, models.vocab, context, s, relation, &cfg.rule_decode)?;
        rules.extend(d.rules);
        score += d.score;
        inputs.push(d.input);
    }
    Ok((rules, Some(score), Some(inputs.join("\n"))))
}

#[allow(clippy::too_many_arguments)]
fn iterate<T: Scalar>(
    models: &Models<'_, T>,
    state: &StoryState,
    iteration: usize,
    mode: RunMode,
    provided: Option<&SilverPair>,
    cfg: &ControllerConfig,
) -> Result<Iteration> {
    let none = (Vec::new(), None, None);
    let (effect, cause) = match mode {
        RunMode::Oracle => {
            let p = provided.ok_or_else(|| Error::Contract(format!("no provided rules for iteration {iteration}")))?;
            ((p.effect.texts(), None, None), (p.cause.texts(), None, None))
        }
        RunMode::NoIrWoSe => (none.clone(), none),
        RunMode::Seg => {
            let ctx = state.render_without_ending();
            (rules_for(models, state, &ctx, RelationType::Effect, cfg)?, none)
        }
        _ => {
            let ctx = state.render();
            (
                rules_for(models, state, &ctx, RelationType::Effect, cfg)?,
                rules_for(models, state, &ctx, RelationType::Cause, cfg)?,
            )
        }
    };
    let rules = concat_rules(&effect.0, &cause.0, models.vocab, cfg.max_rule_tokens);
    let memory_rows = encode_rules(models.sentence, models.vocab, &rules, cfg.max_rule_tokens)?;
    let s = gen_next_sentence(
        models.sentence,
        models.vocab,
        &rules,
        state,
        mode.sentence_input(),
        &cfg.sentence_decode,
    )?;
    Ok(Iteration {
        entry: TraceEntry {
            iteration,
            effect_rules: effect.0,
            cause_rules: cause.0,
            rules,
            sentence: s.sentence,
            effect_score: effect.1,
            cause_score: cause.1,
            sentence_score: s.score,
            sentence_finished: s.finished,
            effect_input: effect.2,
            cause_input: cause.2,
            sentence_input: s.input,
        },
        memory_rows,
    })
}

fn run_loop<T: Scalar>(
    models: &Models<'_, T>,
    story_id: &str,
    initial: StoryState,
    iterations: std::ops::RangeInclusive<usize>,
    mode: RunMode,
    provided: Option<&BTreeMap<usize, SilverPair>>,
    cfg: &ControllerConfig,
) -> Result<Completion> {
    let mut state = initial;
    let mut memory = RuleMemory::new(cfg.max_rule_tokens, models.sentence.config.hidden);
    let mut trace = GenerationTrace {
        story_id: story_id.to_string(),
        mode,
        rule_decode: cfg.rule_decode.clone(),
        sentence_decode: cfg.sentence_decode.clone(),
        entries: Vec::new(),
        error: None,
    };
    let mut generated = Vec::new();
    for i in iterations {
        let step = iterate(models, &state, i, mode, provided.and_then(|p| p.get(&i)), cfg)
            .and_then(|it| memory.push(&it.memory_rows).map(|_| it));
        match step {
            Ok(it) => {
                state = state.update(it.entry.sentence.clone());
                generated.push(it.entry.sentence.clone());
                trace.entries.push(it.entry);
            }
            Err(e) => {
                log::error!("story {story_id}, iteration {i}: {e}");
                trace.error = Some(format!("iteration {i}: {e}"));
                break;
            }
        }
    }
    let mut story = state.prefix;
    if mode != RunMode::Seg {
        story.push(state.ending);
    }
    Ok(Completion {
        story_id: story_id.to_string(),
        generated,
        story,
        memory,
        trace,
    })
}

/// Runs the loop for `n - 3` iterations from `s_1 s_2 [SEP] s_n`. Stage
/// failures end the run early and are recorded in the trace.
pub fn run<T: Scalar>(
    models: &Models<'_, T>,
    example: &NscExample,
    mode: RunMode,
    cfg: &ControllerConfig,
) -> Result<Completion> {
    let n = example.story_len();
    if n < 4 || example.beginning.len() != 2 {
        return Err(Error::Contract(format!(
            "story {} cannot be completed: {n} sentences",
            example.id
        )));
    }
    if mode == RunMode::Seg {
        return Err(Error::Config("use run_seg for ending generation".into()));
    }
    let provided = if mode == RunMode::Oracle {
        let p = example
            .silver_rules
            .as_ref()
            .ok_or_else(|| Error::Contract(format!("story {} has no provided rules", example.id)))?;
        if let Some(i) = example.iterations().find(|i| !p.contains_key(i)) {
            return Err(Error::Contract(format!(
                "story {} has no provided rules for iteration {i}",
                example.id
            )));
        }
        Some(p)
    } else {
        None
    };
    run_loop(
        models,
        &example.id,
        example.initial_state(),
        example.iterations(),
        mode,
        provided,
        cfg,
    )
}

/// Decoded-rule completion with the full incomplete story as context.
pub fn run_coins<T: Scalar>(
    models: &Models<'_, T>,
    example: &NscExample,
    cfg: &ControllerConfig,
) -> Result<Completion> {
    run(models, example, RunMode::Full, cfg)
}

/// Completion from the example's provided rules; errors if any iteration
/// lacks them.
pub fn run_oracle<T: Scalar>(
    models: &Models<'_, T>,
    example: &NscExample,
    cfg: &ControllerConfig,
) -> Result<Completion> {
    run(models, example, RunMode::Oracle, cfg)
}

/// Single iteration from four context sentences: Effect rules for the
/// fourth, then the ending.
pub fn run_seg<T: Scalar>(
    models: &Models<'_, T>,
    story_id: &str,
    context: &[String],
    cfg: &ControllerConfig,
) -> Result<Completion> {
    if context.len() != 4 {
        return Err(Error::Contract(format!(
            "ending generation needs 4 context sentences, got {}",
            context.len()
        )));
    }
    let state = StoryState::new(context.to_vec(), "");
    run_loop(models, story_id, state, 4..=4, RunMode::Seg, None, cfg)
}

/// Plain language-model baseline: `s_3..s_{n-1}` decoded in one pass.
pub fn run_baseline<T: Scalar>(
    model: &LanguageModel<T>,
    vocab: &Vocab,
    example: &NscExample,
    cfg: &DecodeConfig,
) -> Result<(Vec<String>, f64)> {
    let src = crate::data::serialize::baseline_source(&example.initial_state());
    let (text, score, _) = decode_text(model, vocab, vocab.encode(&src), cfg)?;
    Ok((split_sentences(&text, example.targets.len()), score))
}

/// Splits decoded text after sentence-final punctuation tokens into at most
/// `k` sentences; the remainder joins the last one.
pub fn split_sentences(text: &str, k: usize) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut cur: Vec<&str> = Vec::new();
    for tok in text.split_whitespace() {
        cur.push(tok);
        if matches!(tok, "." | "!" | "?") && out.len() + 1 < k {
            out.push(cur.join(" "));
            cur.clear();
        }
    }
    if !cur.is_empty() {
        out.push(cur.join(" "));
    }
    out
}

/// Stop token used by all decoders.
pub const STOP: TokenId = EOS;
