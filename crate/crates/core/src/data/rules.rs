//! Semi-structured inference rules and their Cause/Effect clustering.

use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationType {
    Cause,
    Effect,
}

impl RelationType {
    pub fn token(self) -> &'static str {
        match self {
            RelationType::Cause => crate::tokenizer::Special::RelCause.surface(),
            RelationType::Effect => crate::tokenizer::Special::RelEffect.surface(),
        }
    }

    pub fn from_token(s: &str) -> Option<Self> {
        [RelationType::Cause, RelationType::Effect]
            .into_iter()
            .find(|r| r.token() == s)
    }
}

/// Dimensions 1-5 explain what causes or enables a sentence, 6-10 what it
/// results in.
pub fn cluster_dimension(dimension: u8) -> Result<RelationType> {
    match dimension {
        1..=5 => Ok(RelationType::Cause),
        6..=10 => Ok(RelationType::Effect),
        d => Err(Error::Range {
            what: "dimension",
            value: d as i64,
            min: 1,
            max: 10,
        }),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RuleFlavor {
    Specific,
    #[default]
    General,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Connective {
    CausesEnables,
    Causes,
    Enables,
    ResultsIn,
    Motivates,
}

impl Connective {
    pub const ALL: [Connective; 5] = [
        Connective::CausesEnables,
        Connective::Causes,
        Connective::Enables,
        Connective::ResultsIn,
        Connective::Motivates,
    ];

    pub fn canonical(self) -> &'static str {
        match self {
            Connective::CausesEnables => ">Causes/Enables>",
            Connective::Causes => ">Causes>",
            Connective::Enables => ">Enables>",
            Connective::ResultsIn => ">Results in>",
            Connective::Motivates => ">Motivates>",
        }
    }
}

impl fmt::Display for Connective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.canonical())
    }
}

fn connective_patterns() -> &'static [(Connective, Regex)] {
    static PATTERNS: OnceLock<Vec<(Connective, Regex)>> = OnceLock::new();
    PATTERNS.get_or_init(|| {
        Connective::ALL
            .iter()
            .map(|&c| {
                // tolerate the spacing and case the tokenizer's decode produces
                let body = crate::tokenizer::normalize_tokens(c.canonical(), false)
                    .iter()
                    .map(|t| regex::escape(t))
                    .collect::<Vec<_>>()
                    .join(r"\s*");
                (c, Regex::new(&format!("(?i){body}")).expect("valid connective pattern"))
            })
            .collect()
    })
}

/// `antecedent >connective> consequent`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RuleText {
    pub antecedent: String,
    pub connective: Option<Connective>,
    pub consequent: String,
    pub raw: String,
}

impl RuleText {
    pub fn is_parsed(&self) -> bool {
        self.connective.is_some()
    }

    /// Canonical rendering; unparsed rules render as their raw text.
    pub fn render(&self) -> String {
        match self.connective {
            Some(c) => format!("{} {} {}", self.antecedent, c.canonical(), self.consequent),
            None => self.raw.clone(),
        }
    }
}

/// Splits a rule on its first recognized connective. Text without one is
/// kept verbatim in `raw` with empty parts.
pub fn parse_rule(raw: &str) -> RuleText {
    let best = connective_patterns()
        .iter()
        .filter_map(|(c, re)| re.find(raw).map(|m| (m.start(), std::cmp::Reverse(m.end()), *c, m)))
        .min_by_key(|(start, end, _, _)| (*start, *end));
    match best {
        Some((_, _, c, m)) => RuleText {
            antecedent: raw[..m.start()].trim().to_string(),
            connective: Some(c),
            consequent: raw[m.end()..].trim().to_string(),
            raw: raw.to_string(),
        },
        None => RuleText {
            antecedent: String::new(),
            connective: None,
            consequent: String::new(),
            raw: raw.to_string(),
        },
    }
}

impl Serialize for RuleText {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.raw)
    }
}

impl<'de> Deserialize<'de> for RuleText {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        Ok(parse_rule(&raw))
    }
}

/// One annotated rule pair for a selected sentence of a story.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlucoseRecord {
    pub story_id: String,
    /// 1-based index of the selected sentence.
    pub sentence_index: usize,
    pub dimension: u8,
    pub specific: RuleText,
    pub general: RuleText,
}

impl GlucoseRecord {
    pub fn validate(&self) -> Result<()> {
        cluster_dimension(self.dimension)?;
        if self.sentence_index == 0 {
            return Err(Error::Range {
                what: "sentence_index",
                value: 0,
                min: 1,
                max: i64::MAX,
            });
        }
        Ok(())
    }

    pub fn rule(&self, flavor: RuleFlavor) -> &RuleText {
        match flavor {
            RuleFlavor::Specific => &self.specific,
            RuleFlavor::General => &self.general,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionRule {
    pub dimension: u8,
    pub rule: RuleText,
}

/// All rules of one relation for one sentence, in ascending dimension order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleBundle {
    pub relation: RelationType,
    pub flavor: RuleFlavor,
    pub rules: Vec<DimensionRule>,
}

impl RuleBundle {
    pub fn empty(relation: RelationType, flavor: RuleFlavor) -> Self {
        Self {
            relation,
            flavor,
            rules: Vec::new(),
        }
    }

    /// Bundle of decoded rule strings, which carry no dimension (`0`).
    pub fn from_texts<I, S>(relation: RelationType, flavor: RuleFlavor, texts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            relation,
            flavor,
            rules: texts
                .into_iter()
                .map(|t| DimensionRule {
                    dimension: 0,
                    rule: parse_rule(t.as_ref()),
                })
                .collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn texts(&self) -> Vec<String> {
        self.rules.iter().map(|r| r.rule.raw.clone()).collect()
    }

    /// Dimensions of annotated rules must belong to the bundle's relation.
    pub fn validate(&self) -> Result<()> {
        for r in &self.rules {
            if r.dimension != 0 && cluster_dimension(r.dimension)? != self.relation {
                return Err(Error::Schema(format!(
                    "dimension {} does not belong to a {:?} bundle",
                    r.dimension, self.relation
                )));
            }
        }
        Ok(())
    }
}

/// Collects the rules of `relation` attached to one sentence.
///
/// Records are expected to belong to a single story.
pub fn aggregate_rules(
    records: &[GlucoseRecord],
    sentence_index: usize,
    relation: RelationType,
    flavor: RuleFlavor,
) -> RuleBundle {
    debug_assert!(records.windows(2).all(|w| w[0].story_id == w[1].story_id));
    let mut rules: Vec<DimensionRule> = records
        .iter()
        .filter(|r| r.sentence_index == sentence_index)
        .filter(|r| cluster_dimension(r.dimension).ok() == Some(relation))
        .map(|r| DimensionRule {
            dimension: r.dimension,
            rule: r.rule(flavor).clone(),
        })
        .collect();
    rules.sort_by_key(|r| r.dimension);
    RuleBundle {
        relation,
        flavor,
        rules,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(idx: usize, dim: u8, text: &str) -> GlucoseRecord {
        GlucoseRecord {
            story_id: "s".into(),
            sentence_index: idx,
            dimension: dim,
            specific: parse_rule(text),
            general: parse_rule(&format!("general {text}")),
        }
    }

    #[test]
    fn clustering_matches_dimension_table() {
        assert_eq!(cluster_dimension(1).unwrap(), RelationType::Cause);
        assert_eq!(cluster_dimension(6).unwrap(), RelationType::Effect);
        assert!(matches!(cluster_dimension(11), Err(Error::Range { .. })));
        assert!(cluster_dimension(0).is_err());
    }

    #[test]
    fn parse_splits_on_connective() {
        let r = parse_rule("Jane loves cooking >Causes/Enables> Jane learns everything there is to learn");
        assert_eq!(r.antecedent, "Jane loves cooking");
        assert_eq!(r.connective, Some(Connective::CausesEnables));
        assert_eq!(r.consequent, "Jane learns everything there is to learn");
    }

    #[test]
    fn parse_keeps_unrecognized_raw() {
        let r = parse_rule("no connective here");
        assert!(!r.is_parsed());
        assert!(r.antecedent.is_empty() && r.consequent.is_empty());
        assert_eq!(r.raw, "no connective here");
        assert_eq!(r.render(), "no connective here");
    }

    #[test]
    fn parse_accepts_tokenized_connectives() {
        let r = parse_rule("someone_a sees a thing > causes / enables > someone_a kicks it");
        assert_eq!(r.connective, Some(Connective::CausesEnables));
        assert_eq!(r.antecedent, "someone_a sees a thing");
        let r = parse_rule("x > results in > y");
        assert_eq!(r.connective, Some(Connective::ResultsIn));
    }

    #[test]
    fn first_connective_wins() {
        let r = parse_rule("a >Enables> b >Motivates> c");
        assert_eq!(r.connective, Some(Connective::Enables));
        assert_eq!(r.consequent, "b >Motivates> c");
    }

    #[test]
    fn aggregation_filters_by_cluster_and_sorts() {
        let recs = vec![
            record(2, 7, "g >Causes> h"),
            record(2, 4, "c >Enables> d"),
            record(2, 1, "a >Causes> b"),
        ];
        let cause = aggregate_rules(&recs, 2, RelationType::Cause, RuleFlavor::Specific);
        assert_eq!(cause.rules.iter().map(|r| r.dimension).collect::<Vec<_>>(), vec![1, 4]);
        let effect = aggregate_rules(&recs, 2, RelationType::Effect, RuleFlavor::Specific);
        assert_eq!(effect.rules.iter().map(|r| r.dimension).collect::<Vec<_>>(), vec![7]);
        assert!(aggregate_rules(&recs, 3, RelationType::Cause, RuleFlavor::Specific).is_empty());
        let general = aggregate_rules(&recs, 2, RelationType::Effect, RuleFlavor::General);
        assert!(general.rules[0].rule.raw.starts_with("general"));
    }

    #[test]
    fn record_json_round_trip() {
        let rec = record(3, 6, "x >Results in> y");
        let line = serde_json::to_string(&rec).unwrap();
        assert_eq!(
            line,
            r#"{"story_id":"s","sentence_index":3,"dimension":6,"specific":"x >Results in> y","general":"general x >Results in> y"}"#
        );
        let back: GlucoseRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back, rec);
    }
}
