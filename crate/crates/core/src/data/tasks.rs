//! Task corpora: narrative story completion (NSC) and story ending
//! generation (SEG), plus the per-iteration rule annotations used to train
//! and drive the controller.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::rules::{aggregate_rules, GlucoseRecord, RelationType, RuleBundle, RuleFlavor};
use super::story::{Story, StoryState};
use crate::error::{Error, Result};

/// Effect rules for the current sentence and Cause rules for the ending at
/// one controller iteration.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SilverPair {
    pub effect: RuleBundle,
    pub cause: RuleBundle,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NscExample {
    pub id: String,
    /// `s_1, s_2`.
    pub beginning: Vec<String>,
    /// `s_n`, which follows the gap.
    pub ending: String,
    /// `s_3 .. s_{n-1}` in order.
    pub targets: Vec<String>,
    /// Keyed by controller iteration (`2..=n-2`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub silver_rules: Option<BTreeMap<usize, SilverPair>>,
}

impl NscExample {
    pub fn story_len(&self) -> usize {
        self.beginning.len() + self.targets.len() + 1
    }

    pub fn iterations(&self) -> std::ops::RangeInclusive<usize> {
        2..=self.targets.len() + 1
    }

    pub fn initial_state(&self) -> StoryState {
        StoryState::new(self.beginning.clone(), self.ending.clone())
    }

    /// Gold story in positional order.
    pub fn story(&self) -> Story {
        let mut sentences = self.beginning.clone();
        sentences.extend(self.targets.iter().cloned());
        sentences.push(self.ending.clone());
        Story {
            id: self.id.clone(),
            sentences,
        }
    }

    /// Teacher-forced state at `iteration`: gold `s_1..s_i`, the gap, `s_n`.
    pub fn state_at(&self, iteration: usize) -> StoryState {
        let mut prefix = self.beginning.clone();
        prefix.extend(self.targets[..iteration - 2].iter().cloned());
        StoryState::new(prefix, self.ending.clone())
    }

    pub fn silver(&self, iteration: usize) -> Option<&SilverPair> {
        self.silver_rules.as_ref()?.get(&iteration)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegExample {
    pub id: String,
    pub context: Vec<String>,
    pub target: String,
}

/// `None` (with a warning) for stories shorter than four sentences.
pub fn build_nsc(story: &Story) -> Option<NscExample> {
    let n = story.len();
    if n < 4 {
        log::warn!("skipping story {}: {} sentences, NSC needs at least 4", story.id, n);
        return None;
    }
    Some(NscExample {
        id: story.id.clone(),
        beginning: story.sentences[..2].to_vec(),
        ending: story.sentences[n - 1].clone(),
        targets: story.sentences[2..n - 1].to_vec(),
        silver_rules: None,
    })
}

/// `None` (with a warning) unless the story has exactly five sentences.
pub fn build_seg(story: &Story) -> Option<SegExample> {
    if story.len() != 5 {
        log::warn!(
            "skipping story {}: {} sentences, SEG needs exactly 5",
            story.id,
            story.len()
        );
        return None;
    }
    Some(SegExample {
        id: story.id.clone(),
        context: story.sentences[..4].to_vec(),
        target: story.sentences[4].clone(),
    })
}

pub fn build_nsc_corpus(stories: &[Story]) -> Vec<NscExample> {
    stories.iter().filter_map(build_nsc).collect()
}

pub fn build_seg_corpus(stories: &[Story]) -> Vec<SegExample> {
    stories.iter().filter_map(build_seg).collect()
}

/// Groups records by story id, keeping file order within a story.
pub fn index_records(records: &[GlucoseRecord]) -> HashMap<&str, Vec<GlucoseRecord>> {
    let mut map: HashMap<&str, Vec<GlucoseRecord>> = HashMap::new();
    for r in records {
        map.entry(r.story_id.as_str()).or_default().push(r.clone());
    }
    map
}

/// Rule bundles from annotations for every controller iteration of `ex`:
/// Effect rules of sentence `i`, Cause rules of the ending.
pub fn annotated_rules(ex: &NscExample, records: &[GlucoseRecord], flavor: RuleFlavor) -> BTreeMap<usize, SilverPair> {
    let n = ex.story_len();
    ex.iterations()
        .map(|i| {
            let pair = SilverPair {
                effect: aggregate_rules(records, i, RelationType::Effect, flavor),
                cause: aggregate_rules(records, n, RelationType::Cause, flavor),
            };
            (i, pair)
        })
        .collect()
}

/// Fills `silver_rules` of every example from annotation records.
pub fn attach_annotated_rules(corpus: &mut [NscExample], records: &[GlucoseRecord], flavor: RuleFlavor) {
    let index = index_records(records);
    for ex in corpus {
        let recs = index.get(ex.id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
        ex.silver_rules = Some(annotated_rules(ex, recs, flavor));
    }
}

/// Which story text a rule generator conditions on during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CsiContext {
    /// The incomplete story `s_1..s_i [SEP] s_n`, as seen at inference time.
    #[default]
    Incomplete,
    /// The full gold story.
    Full,
}

/// One rule-generation training target.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsiExample {
    pub story_id: String,
    pub context: String,
    pub selected: String,
    pub relation: RelationType,
    pub bundle: RuleBundle,
}

/// Rule-generation examples for one annotated story, following the
/// controller's iteration structure. Empty bundles are skipped.
pub fn csi_examples(
    story: &Story,
    records: &[GlucoseRecord],
    flavor: RuleFlavor,
    context: CsiContext,
) -> Vec<CsiExample> {
    let Some(ex) = build_nsc(story) else {
        return Vec::new();
    };
    let n = story.len();
    let full = story.sentences.join(" ");
    let mut out = Vec::new();
    for i in ex.iterations() {
        let state = ex.state_at(i);
        let ctx = match context {
            CsiContext::Incomplete => state.render(),
            CsiContext::Full => full.clone(),
        };
        let effect = aggregate_rules(records, i, RelationType::Effect, flavor);
        if !effect.is_empty() {
            out.push(CsiExample {
                story_id: story.id.clone(),
                context: ctx.clone(),
                selected: state.current().to_string(),
                relation: RelationType::Effect,
                bundle: effect,
            });
        }
        let cause = aggregate_rules(records, n, RelationType::Cause, flavor);
        if !cause.is_empty() {
            out.push(CsiExample {
                story_id: story.id.clone(),
                context: ctx,
                selected: story.sentences[n - 1].clone(),
                relation: RelationType::Cause,
                bundle: cause,
            });
        }
    }
    out
}

/// Deterministic split of items into train/dev/test by story id; every id
/// lands in exactly one part.
pub fn split_by_story<T: Clone>(
    items: &[T],
    id_of: impl Fn(&T) -> &str,
    dev_fraction: f64,
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    if !(0.0..=1.0).contains(&(dev_fraction + test_fraction)) || dev_fraction < 0.0 || test_fraction < 0.0 {
        return Err(Error::Config(format!(
            "split fractions dev={dev_fraction} test={test_fraction} are invalid"
        )));
    }
    let ids: BTreeSet<&str> = items.iter().map(&id_of).collect();
    let mut ids: Vec<&str> = ids.into_iter().collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = ids.len();
    let n_test = (n as f64 * test_fraction).round() as usize;
    let n_dev = ((n as f64 * dev_fraction).round() as usize).min(n - n_test);
    let part: HashMap<&str, u8> = ids
        .iter()
        .enumerate()
        .map(|(k, id)| {
            let p = if k < n_test {
                2
            } else if k < n_test + n_dev {
                1
            } else {
                0
            };
            (*id, p)
        })
        .collect();
    let (mut train, mut dev, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for it in items {
        match part[id_of(it)] {
            0 => train.push(it.clone()),
            1 => dev.push(it.clone()),
            _ => test.push(it.clone()),
        }
    }
    Ok((train, dev, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::rules::parse_rule;

    fn story(id: &str, n: usize) -> Story {
        Story {
            id: id.into(),
            sentences: (1..=n).map(|i| format!("{id} sentence {i} .")).collect(),
        }
    }

    #[test]
    fn nsc_layout_for_five_and_four_sentences() {
        let ex = build_nsc(&story("a", 5)).unwrap();
        assert_eq!(ex.beginning.len(), 2);
        assert_eq!(ex.targets.len(), 2);
        assert_eq!(
            ex.initial_state().render(),
            "a sentence 1 . a sentence 2 . [SEP] a sentence 5 ."
        );
        assert_eq!(ex.iterations().count(), 2);
        let ex = build_nsc(&story("b", 4)).unwrap();
        assert_eq!(ex.targets.len(), 1);
        assert!(build_nsc(&story("c", 3)).is_none());
    }

    #[test]
    fn nsc_reconstructs_story() {
        let s = story("a", 6);
        assert_eq!(build_nsc(&s).unwrap().story(), s);
    }

    #[test]
    fn seg_requires_five_sentences() {
        let ex = build_seg(&story("a", 5)).unwrap();
        assert_eq!(ex.context.len(), 4);
        assert_eq!(ex.target, "a sentence 5 .");
        assert!(build_seg(&story("b", 3)).is_none());
        assert!(build_seg(&story("b", 6)).is_none());
    }

    #[test]
    fn corpus_counts() {
        let stories: Vec<Story> = (0..10).map(|i| story(&format!("s{i}"), 5)).collect();
        assert_eq!(build_nsc_corpus(&stories).len(), 10);
        let mixed: Vec<Story> = (0..9).map(|i| story(&format!("m{i}"), 3 + i % 4)).collect();
        let fives = mixed.iter().filter(|s| s.len() == 5).count();
        assert_eq!(build_seg_corpus(&mixed).len(), fives);
    }

    #[test]
    fn split_is_disjoint_by_story() {
        let items: Vec<(String, usize)> = (0..50)
            .flat_map(|i| [(format!("s{i}"), 0), (format!("s{i}"), 1)])
            .collect();
        let (tr, dv, te) = split_by_story(&items, |x| x.0.as_str(), 0.2, 0.2, 3).unwrap();
        assert_eq!(tr.len() + dv.len() + te.len(), items.len());
        let ids = |v: &[(String, usize)]| v.iter().map(|x| x.0.clone()).collect::<BTreeSet<_>>();
        assert!(ids(&tr).is_disjoint(&ids(&dv)));
        assert!(ids(&tr).is_disjoint(&ids(&te)));
        assert!(ids(&dv).is_disjoint(&ids(&te)));
        assert_eq!(te.len(), 20);
    }

    #[test]
    fn csi_examples_follow_iterations() {
        let s = story("a", 5);
        let rec = |i: usize, d: u8| GlucoseRecord {
            story_id: "a".into(),
            sentence_index: i,
            dimension: d,
            specific: parse_rule("x >Causes> y"),
            general: parse_rule("X >Causes> Y"),
        };
        let recs = vec![rec(2, 6), rec(3, 7), rec(5, 2)];
        let ex = csi_examples(&s, &recs, RuleFlavor::General, CsiContext::Incomplete);
        assert_eq!(ex.len(), 4);
        assert_eq!(ex[0].relation, RelationType::Effect);
        assert_eq!(ex[0].selected, "a sentence 2 .");
        assert_eq!(ex[1].selected, "a sentence 5 .");
        assert!(ex[2].context.contains("a sentence 3 . [SEP]"));
        let full = csi_examples(&s, &recs, RuleFlavor::General, CsiContext::Full);
        assert!(!full[0].context.contains("[SEP]"));
    }
}
