//! Templated synthetic stories with rule annotations.
//!
//! Each story has a hidden action and a hidden emotion. The action appears
//! only in the third sentence and in the Effect rule of the second
//! sentence, so it cannot be recovered from the beginning and ending alone.
//! The emotion determines the ending, so it is recoverable from `s_n` and is
//! spelled out by the ending's Cause rule.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::rules::{parse_rule, GlucoseRecord};
use super::story::Story;
use crate::error::{Error, Result};

const NAMES: [&str; 8] = ["Jane", "Tom", "Lucy", "Mark", "Anna", "Paul", "Kate", "Sam"];
const PLACES: [&str; 6] = ["park", "store", "beach", "school", "farm", "lake"];
const OBJECTS: [&str; 6] = ["ball", "book", "kite", "cake", "dog", "hat"];
const ACTIONS: [&str; 4] = ["kicked", "painted", "hid", "sold"];
const EMOTIONS: [(&str, &str); 4] = [
    ("happy", "laughed all day"),
    ("sad", "cried at home"),
    ("angry", "shouted at the sky"),
    ("proud", "smiled at everyone"),
];

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SyntheticConfig {
    pub stories: usize,
    /// 4 or 5.
    pub sentences: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            stories: 64,
            sentences: 5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub stories: Vec<Story>,
    pub records: Vec<GlucoseRecord>,
}

fn record(story_id: &str, idx: usize, dim: u8, specific: String, general: String) -> GlucoseRecord {
    GlucoseRecord {
        story_id: story_id.to_string(),
        sentence_index: idx,
        dimension: dim,
        specific: parse_rule(&specific),
        general: parse_rule(&general),
    }
}

/// Number of distinct (beginning, ending) contexts the templates can form.
pub fn context_space() -> usize {
    NAMES.len() * PLACES.len() * OBJECTS.len() * EMOTIONS.len()
}

/// Stories with pairwise distinct visible contexts, so a model can memorize
/// every hidden action from its context.
pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticCorpus> {
    if !(4..=5).contains(&cfg.sentences) {
        return Err(Error::Config(format!(
            "synthetic stories have 4 or 5 sentences, not {}",
            cfg.sentences
        )));
    }
    if cfg.stories > context_space() {
        return Err(Error::Config(format!(
            "at most {} distinct synthetic stories exist",
            context_space()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut seen = HashSet::new();
    let mut stories = Vec::with_capacity(cfg.stories);
    let mut records = Vec::new();
    while stories.len() < cfg.stories {
        let name = *NAMES.choose(&mut rng).unwrap();
        let place = *PLACES.choose(&mut rng).unwrap();
        let object = *OBJECTS.choose(&mut rng).unwrap();
        let emotion = rng.gen_range(0..EMOTIONS.len());
        let action = *ACTIONS.choose(&mut rng).unwrap();
        if !seen.insert((name, place, object, emotion)) {
            continue;
        }
        let (feeling, ending) = EMOTIONS[emotion];
        let id = format!("syn-{:05}", stories.len());

        let mut sentences = vec![
            format!("{name} went to the {place} ."),
            format!("{name} saw a {object} there ."),
            format!("{name} {action} the {object} ."),
        ];
        if cfg.sentences == 5 {
            sentences.push(format!("{name} felt very {feeling} ."));
        }
        sentences.push(format!("{name} {ending} ."));
        let n = sentences.len();

        records.push(record(
            &id,
            1,
            8,
            format!("{name} goes to the {place} >Results in> {name} is at the {place}"),
            "Someone_A goes to Somewhere_A >Results in> Someone_A is at Somewhere_A".to_string(),
        ));
        records.push(record(
            &id,
            2,
            6,
            format!("{name} sees a {object} >Causes/Enables> {name} {action} the {object}"),
            format!("Someone_A sees Something_A >Causes/Enables> Someone_A {action} Something_A"),
        ));
        if n == 5 {
            records.push(record(
                &id,
                3,
                7,
                format!("{name} {action} the {object} >Causes/Enables> {name} feels {feeling}"),
                format!("Someone_A {action} Something_A >Causes/Enables> Someone_A feels {feeling}"),
            ));
        }
        records.push(record(
            &id,
            n,
            2,
            format!("{name} feels {feeling} >Motivates> {name} {ending}"),
            format!("Someone_A feels {feeling} >Motivates> Someone_A {ending}"),
        ));
        stories.push(Story::new(id, sentences)?);
    }
    Ok(SyntheticCorpus { stories, records })
}
