//! Teacher-forced training sequences and silver-rule enrichment.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{concat_rules, gen_inference_rules};
use crate::data::rules::{RelationType, RuleBundle, RuleFlavor};
use crate::data::serialize::{baseline_example, sentence_example, serialize_csi_example, SentenceInput};
use crate::data::story::StoryState;
use crate::data::tasks::{CsiExample, NscExample, SegExample, SilverPair};
use crate::decoding::DecodeConfig;
use crate::error::Result;
use crate::lm::{JointItem, LanguageModel, MaskedSequence};
use crate::tensor::Scalar;
use crate::tokenizer::Vocab;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceLimits {
    /// Model context length.
    pub max_len: usize,
    /// Cap on target tokens per sentence, `[EOS]` included.
    pub max_sentence_tokens: usize,
    /// Cap on target tokens per rule bundle, `[EOS]` included.
    pub max_bundle_tokens: usize,
    /// Token budget of the joined rule block in sentence inputs.
    pub max_rule_tokens: usize,
}

impl SequenceLimits {
    pub fn for_context(max_len: usize) -> Self {
        Self {
            max_len,
            max_sentence_tokens: 24,
            max_bundle_tokens: 48,
            max_rule_tokens: 96,
        }
    }
}

fn rules_at(ex: &NscExample, i: usize, vocab: &Vocab, limits: &SequenceLimits) -> Vec<String> {
    match ex.silver(i) {
        Some(p) => concat_rules(&p.effect.texts(), &p.cause.texts(), vocab, limits.max_rule_tokens),
        None => Vec::new(),
    }
}

/// One sequence per iteration and input layout: rules and teacher-forced
/// context as source, the gold next sentence as target.
pub fn sentence_sequences(
    ex: &NscExample,
    vocab: &Vocab,
    inputs: &[SentenceInput],
    limits: &SequenceLimits,
) -> Result<Vec<MaskedSequence>> {
    let mut out = Vec::new();
    for i in ex.iterations() {
        let gold = &ex.targets[i - 2];
        if gold.trim().is_empty() {
            log::warn!("story {}: empty gold sentence at iteration {i}, skipped", ex.id);
            continue;
        }
        let rules = rules_at(ex, i, vocab, limits);
        let state = ex.state_at(i);
        for &input in inputs {
            let st = sentence_example(&rules, &state, gold, input);
            out.push(MaskedSequence::encode(
                vocab,
                &st,
                limits.max_len,
                limits.max_sentence_tokens,
            )?);
        }
    }
    Ok(out)
}

/// Rule-generator sequences for the example's provided rules: per
/// iteration, Effect rules of `s_i` and Cause rules of `s_n` against the
/// teacher-forced context. Empty bundles are skipped.
pub fn rule_sequences(ex: &NscExample, vocab: &Vocab, limits: &SequenceLimits) -> Result<Vec<MaskedSequence>> {
    let mut out = Vec::new();
    for i in ex.iterations() {
        let Some(pair) = ex.silver(i) else { continue };
        let state = ex.state_at(i);
        let ctx = state.render();
        for (selected, bundle) in [(state.current(), &pair.effect), (ex.ending.as_str(), &pair.cause)] {
            if bundle.is_empty() {
                continue;
            }
            let st = serialize_csi_example(&ctx, selected, bundle.relation, bundle);
            out.push(MaskedSequence::encode(
                vocab,
                &st,
                limits.max_len,
                limits.max_bundle_tokens,
            )?);
        }
    }
    Ok(out)
}

/// Rule-generator sequences from annotation-derived examples.
pub fn csi_sequences(examples: &[CsiExample], vocab: &Vocab, limits: &SequenceLimits) -> Result<Vec<MaskedSequence>> {
    examples
        .iter()
        .map(|e| {
            let st = serialize_csi_example(&e.context, &e.selected, e.relation, &e.bundle);
            MaskedSequence::encode(vocab, &st, limits.max_len, limits.max_bundle_tokens)
        })
        .collect()
}

pub fn joint_item(
    ex: &NscExample,
    vocab: &Vocab,
    inputs: &[SentenceInput],
    limits: &SequenceLimits,
) -> Result<JointItem> {
    Ok(JointItem {
        sentence: sentence_sequences(ex, vocab, inputs, limits)?,
        rules: rule_sequences(ex, vocab, limits)?,
    })
}

/// `[SOS] s_1 s_2 [SEP] s_n` → all middle sentences.
pub fn baseline_sequence(ex: &NscExample, vocab: &Vocab, limits: &SequenceLimits) -> Result<MaskedSequence> {
    let cap = limits.max_sentence_tokens * ex.targets.len().max(1);
    MaskedSequence::encode(vocab, &baseline_example(ex), limits.max_len, cap)
}

/// Ending-generation sequence: Effect rules of `s_4` (if any) and the four
/// context sentences, then `s_5`.
pub fn seg_sequence(
    ex: &SegExample,
    rules: &[String],
    vocab: &Vocab,
    limits: &SequenceLimits,
) -> Result<MaskedSequence> {
    let rules = concat_rules(rules, &[], vocab, limits.max_rule_tokens);
    let state = StoryState::new(ex.context.clone(), "");
    let st = sentence_example(&rules, &state, &ex.target, SentenceInput::RulesAndPrefix);
    MaskedSequence::encode(vocab, &st, limits.max_len, limits.max_sentence_tokens)
}

/// Ending-generation sequences for both models: the sentence model on
/// `s_5` given Effect rules of `s_4`, the rule generator on those rules.
pub fn seg_joint_item(
    ex: &SegExample,
    effect: &RuleBundle,
    vocab: &Vocab,
    limits: &SequenceLimits,
) -> Result<JointItem> {
    let mut rules = Vec::new();
    if !effect.is_empty() {
        let state = StoryState::new(ex.context.clone(), "");
        let selected = ex.context.last().map(String::as_str).unwrap_or("");
        let st = serialize_csi_example(&state.render_without_ending(), selected, RelationType::Effect, effect);
        rules.push(MaskedSequence::encode(
            vocab,
            &st,
            limits.max_len,
            limits.max_bundle_tokens,
        )?);
    }
    Ok(JointItem {
        sentence: vec![seg_sequence(ex, &effect.texts(), vocab, limits)?],
        rules,
    })
}

/// Fills `silver_rules` by decoding the rule generator on every
/// iteration's teacher-forced context. A failed decode yields an empty
/// bundle; the example is kept.
pub fn enrich_with_silver<T: Scalar>(
    csi: &LanguageModel<T>,
    vocab: &Vocab,
    corpus: &[NscExample],
    flavor: RuleFlavor,
    decode: &DecodeConfig,
) -> Vec<NscExample> {
    corpus
        .par_iter()
        .map(|ex| {
            let mut map = BTreeMap::new();
            for i in ex.iterations() {
                let state = ex.state_at(i);
                let ctx = state.render();
                let bundle = |selected: &str, relation: RelationType| match gen_inference_rules(
                    csi, vocab, &ctx, selected, relation, decode,
                ) {
                    Ok(d) => RuleBundle::from_texts(relation, flavor, d.rules),
                    Err(e) => {
                        log::warn!("story {}, iteration {i}: rule decoding failed: {e}", ex.id);
                        RuleBundle::empty(relation, flavor)
                    }
                };
                let pair = SilverPair {
                    effect: bundle(state.current(), RelationType::Effect),
                    cause: bundle(&ex.ending, RelationType::Cause),
                };
                map.insert(i, pair);
            }
            NscExample {
                silver_rules: Some(map),
                ..ex.clone()
            }
        })
        .collect()
}
