//! Synthetic corpora with annotated rules, ready for training.

use coins_core::coins::{joint_item, SequenceLimits};
use coins_core::data::serialize::SentenceInput;
use coins_core::data::synthetic::{generate, SyntheticConfig};
use coins_core::data::tasks::{attach_annotated_rules, build_nsc_corpus};
use coins_core::data::{GlucoseRecord, NscExample, RuleFlavor, Story};
use coins_core::lm::{JointItem, LmConfig};
use coins_core::Vocab;

pub struct Fixture {
    pub vocab: Vocab,
    pub stories: Vec<Story>,
    pub records: Vec<GlucoseRecord>,
    /// Completion examples with annotated general rules.
    pub corpus: Vec<NscExample>,
}

pub fn synthetic(stories: usize, sentences: usize, seed: u64) -> Fixture {
    let c = generate(&SyntheticConfig {
        stories,
        sentences,
        seed,
    })
    .expect("synthetic corpus");
    let texts: Vec<String> = c
        .stories
        .iter()
        .flat_map(|s| s.sentences.clone())
        .chain(
            c.records
                .iter()
                .flat_map(|r| [r.specific.raw.clone(), r.general.raw.clone()]),
        )
        .collect();
    let vocab = Vocab::train(texts.iter().map(String::as_str), 1000, 1, false).expect("vocab");
    let mut corpus = build_nsc_corpus(&c.stories);
    attach_annotated_rules(&mut corpus, &c.records, RuleFlavor::General);
    Fixture {
        vocab,
        stories: c.stories,
        records: c.records,
        corpus,
    }
}

/// One layer, 32 hidden units, no dropout.
pub fn tiny_config(vocab: usize) -> LmConfig {
    LmConfig {
        layers: 1,
        hidden: 32,
        heads: 2,
        dropout: 0.0,
        ..LmConfig::toy(vocab)
    }
}

pub fn limits() -> SequenceLimits {
    SequenceLimits::for_context(128)
}

pub fn joint_items(fx: &Fixture, examples: &[NscExample], inputs: &[SentenceInput]) -> Vec<JointItem> {
    examples
        .iter()
        .map(|e| joint_item(e, &fx.vocab, inputs, &limits()).expect("joint item"))
        .collect()
}
