//! Text layouts of model inputs. Every example is a `source` the model
//! conditions on and a `target` whose tokens carry the loss.
//!
//! * rule generator: `[SOS] context # selected # [EFFECT] #` → `r1 [SEP] r2 [EOS]`
//! * sentence generator: `[SOS] rules [EOK] s_1 .. s_i [SEP] s_n` → `s_{i+1} [EOS]`
//! * plain LM baseline: `[SOS] s_1 s_2 [SEP] s_n` → `s_3 .. s_{n-1} [EOS]`

use serde::{Deserialize, Serialize};

use super::rules::{RelationType, RuleBundle};
use super::story::StoryState;
use super::tasks::NscExample;
use crate::error::{Error, Result};
use crate::tokenizer::Special;

pub const FIELD_DELIMITER: &str = "#";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceTarget {
    pub source: String,
    pub target: String,
}

impl SourceTarget {
    pub fn joined(&self) -> String {
        format!("{} {}", self.source, self.target)
    }
}

fn sep() -> &'static str {
    Special::Sep.surface()
}

/// Rules delimited by `[SEP]`.
pub fn join_rules<S: AsRef<str>>(rules: &[S]) -> String {
    rules
        .iter()
        .map(|r| r.as_ref().trim())
        .collect::<Vec<_>>()
        .join(&format!(" {} ", sep()))
}

/// Inverse of [`join_rules`]; drops empty pieces.
pub fn split_rules(text: &str) -> Vec<String> {
    text.split(sep())
        .map(|r| r.trim().to_string())
        .filter(|r| !r.is_empty())
        .collect()
}

pub fn csi_prompt(context: &str, selected: &str, relation: RelationType) -> String {
    format!(
        "{} {context} {d} {selected} {d} {} {d}",
        Special::Sos.surface(),
        relation.token(),
        d = FIELD_DELIMITER
    )
}

pub fn serialize_csi_example(
    context: &str,
    selected: &str,
    relation: RelationType,
    bundle: &RuleBundle,
) -> SourceTarget {
    let rules = join_rules(&bundle.texts());
    let eos = Special::Eos.surface();
    SourceTarget {
        source: csi_prompt(context, selected, relation),
        target: if rules.is_empty() {
            eos.to_string()
        } else {
            format!("{rules} {eos}")
        },
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CsiFields {
    pub context: String,
    pub selected: String,
    pub relation: RelationType,
    pub rules: Vec<String>,
}

pub fn deserialize_csi_example(text: &str) -> Result<CsiFields> {
    let bad = || Error::Schema(format!("not a rule-generator sequence: {text:?}"));
    let body = text
        .trim()
        .strip_prefix(Special::Sos.surface())
        .and_then(|t| t.strip_suffix(Special::Eos.surface()))
        .ok_or_else(bad)?;
    let parts: Vec<&str> = body.split(FIELD_DELIMITER).map(str::trim).collect();
    let [context, selected, relation, rules] = parts.as_slice() else {
        return Err(bad());
    };
    Ok(CsiFields {
        context: context.to_string(),
        selected: selected.to_string(),
        relation: RelationType::from_token(relation).ok_or_else(bad)?,
        rules: split_rules(rules),
    })
}

/// What the sentence generator is shown.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SentenceInput {
    /// Rules and the full incomplete story.
    #[default]
    Full,
    /// Rules only.
    RulesOnly,
    /// The story prefix only: no rules, no ending.
    PrefixOnly,
    /// Rules and the story prefix, no ending.
    RulesAndPrefix,
}

impl SentenceInput {
    pub fn uses_rules(self) -> bool {
        !matches!(self, SentenceInput::PrefixOnly)
    }
}

/// Source text for the sentence generator. The rule block is closed by
/// `[EOK]` whenever rules are part of the input, even when empty.
pub fn sentence_source<S: AsRef<str>>(rules: &[S], state: &StoryState, input: SentenceInput) -> String {
    let sos = Special::Sos.surface();
    let eok = Special::Eok.surface();
    let rules = join_rules(rules);
    let rule_block = if rules.is_empty() {
        eok.to_string()
    } else {
        format!("{rules} {eok}")
    };
    match input {
        SentenceInput::Full => format!("{sos} {rule_block} {}", state.render()),
        SentenceInput::RulesOnly => format!("{sos} {rule_block}"),
        SentenceInput::PrefixOnly => format!("{sos} {}", state.render_without_ending()),
        SentenceInput::RulesAndPrefix => format!("{sos} {rule_block} {}", state.render_without_ending()),
    }
}

pub fn sentence_example<S: AsRef<str>>(
    rules: &[S],
    state: &StoryState,
    gold: &str,
    input: SentenceInput,
) -> SourceTarget {
    SourceTarget {
        source: sentence_source(rules, state, input),
        target: format!("{} {}", gold.trim(), Special::Eos.surface()),
    }
}

/// `[SOS] s_1 s_2 [SEP] s_n`.
pub fn baseline_source(state: &StoryState) -> String {
    format!("{} {}", Special::Sos.surface(), state.render())
}

pub fn baseline_example(ex: &NscExample) -> SourceTarget {
    SourceTarget {
        source: baseline_source(&ex.initial_state()),
        target: format!("{} {}", ex.targets.join(" "), Special::Eos.surface()),
    }
}
