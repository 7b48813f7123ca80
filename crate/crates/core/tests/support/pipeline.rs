//! Corpus-level checks of the data builders and record formats.

use std::collections::BTreeSet;

use coins_core::data::rules::{cluster_dimension, RelationType};
use coins_core::data::synthetic::{generate, SyntheticConfig};
use coins_core::data::tasks::{attach_annotated_rules, build_nsc_corpus, build_seg_corpus, split_by_story};
use coins_core::data::{jsonl, Story};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// The ten annotation dimensions and their relation, written out by hand.
pub const DIMENSION_TABLE: [(u8, RelationType); 10] = [
    (1, RelationType::Cause),
    (2, RelationType::Cause),
    (3, RelationType::Cause),
    (4, RelationType::Cause),
    (5, RelationType::Cause),
    (6, RelationType::Effect),
    (7, RelationType::Effect),
    (8, RelationType::Effect),
    (9, RelationType::Effect),
    (10, RelationType::Effect),
];

pub fn check_dimensions() -> Result<(), String> {
    for (d, want) in DIMENSION_TABLE {
        let got = cluster_dimension(d).map_err(|e| e.to_string())?;
        if got != want {
            return Err(format!("dimension {d}: {got:?}, expected {want:?}"));
        }
    }
    for d in [0u8, 11, 255] {
        if cluster_dimension(d).is_ok() {
            return Err(format!("dimension {d} accepted"));
        }
    }
    Ok(())
}

/// Synthetic corpus of `n` stories cut to 3, 4 and 5 sentences in turn.
pub fn mixed_corpus(n: usize, seed: u64) -> Result<(Vec<Story>, Vec<coins_core::data::GlucoseRecord>), String> {
    let corpus = generate(&SyntheticConfig {
        stories: n,
        sentences: 5,
        seed,
    })
    .map_err(|e| e.to_string())?;
    let stories = corpus
        .stories
        .into_iter()
        .enumerate()
        .map(|(k, mut s)| {
            s.sentences.truncate(3 + k % 3);
            s
        })
        .collect();
    Ok((stories, corpus.records))
}

fn round_trip<T: Serialize + DeserializeOwned + PartialEq>(name: &str, records: &[T]) -> Result<(), String> {
    let text = jsonl::to_string(records).map_err(|e| e.to_string())?;
    let back: Vec<T> = jsonl::from_str(&text).map_err(|e| e.to_string())?;
    if back != records {
        return Err(format!("{name}: records changed in a round trip"));
    }
    let again = jsonl::to_string(&back).map_err(|e| e.to_string())?;
    if again != text {
        return Err(format!("{name}: bytes changed in a round trip"));
    }
    Ok(())
}

/// Count, reconstruction, split and round-trip invariants on `n` stories.
pub fn check_builders(n: usize) -> Result<(), String> {
    let (stories, records) = mixed_corpus(n, 5)?;
    let mut nsc = build_nsc_corpus(&stories);
    let seg = build_seg_corpus(&stories);

    let want_nsc = stories.iter().filter(|s| s.len() >= 4).count();
    let want_seg = stories.iter().filter(|s| s.len() == 5).count();
    if nsc.len() != want_nsc || seg.len() != want_seg {
        return Err(format!(
            "built {} NSC / {} SEG examples, expected {want_nsc} / {want_seg}",
            nsc.len(),
            seg.len()
        ));
    }
    let by_id: std::collections::HashMap<&str, &Story> = stories.iter().map(|s| (s.id.as_str(), s)).collect();
    for ex in &nsc {
        let s = by_id[ex.id.as_str()];
        if ex.targets.len() != s.len() - 3 || ex.beginning.len() != 2 {
            return Err(format!("{}: wrong NSC shape", ex.id));
        }
        let mut rebuilt = ex.beginning.clone();
        rebuilt.extend(ex.targets.iter().cloned());
        rebuilt.push(ex.ending.clone());
        if rebuilt != s.sentences || ex.story() != *s {
            return Err(format!("{}: NSC does not reconstruct the story", ex.id));
        }
        if ex.iterations().count() != s.len() - 3 {
            return Err(format!("{}: wrong iteration count", ex.id));
        }
    }
    for ex in &seg {
        let s = by_id[ex.id.as_str()];
        let mut rebuilt = ex.context.clone();
        rebuilt.push(ex.target.clone());
        if rebuilt != s.sentences {
            return Err(format!("{}: SEG does not reconstruct the story", ex.id));
        }
    }

    let (train, dev, test) = split_by_story(&nsc, |e| e.id.as_str(), 0.1, 0.1, 3).map_err(|e| e.to_string())?;
    let ids = |v: &[coins_core::data::NscExample]| v.iter().map(|e| e.id.clone()).collect::<BTreeSet<_>>();
    let (a, b, c) = (ids(&train), ids(&dev), ids(&test));
    if !a.is_disjoint(&b) || !a.is_disjoint(&c) || !b.is_disjoint(&c) || a.len() + b.len() + c.len() != nsc.len() {
        return Err("splits overlap or lose stories".into());
    }

    round_trip("stories", &stories)?;
    round_trip("records", &records)?;
    round_trip("nsc", &nsc)?;
    round_trip("seg", &seg)?;
    attach_annotated_rules(&mut nsc, &records, coins_core::data::RuleFlavor::General);
    round_trip("nsc with rules", &nsc)?;
    Ok(())
}
