//! Shared inputs for the benchmarks.

use coins_core::coins::{joint_item, SequenceLimits};
use coins_core::data::serialize::SentenceInput;
use coins_core::data::synthetic::{generate, SyntheticConfig};
use coins_core::data::tasks::{attach_annotated_rules, build_nsc_corpus};
use coins_core::data::{NscExample, RuleFlavor};
use coins_core::lm::JointItem;
use coins_core::{Tensor, Vocab};

/// Deterministic pseudo-random matrix.
pub fn matrix(rows: usize, cols: usize, seed: u64) -> Tensor<f32> {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    Tensor::from_fn([rows, cols], |_| {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((s >> 40) as f32 / (1u64 << 24) as f32) - 0.5
    })
}

/// Synthetic completion corpus with annotated rules and its vocabulary.
pub fn corpus(stories: usize) -> (Vocab, Vec<NscExample>) {
    let c = generate(&SyntheticConfig {
        stories,
        sentences: 5,
        seed: 1,
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
    let mut nsc = build_nsc_corpus(&c.stories);
    attach_annotated_rules(&mut nsc, &c.records, RuleFlavor::General);
    (vocab, nsc)
}

pub fn joint_items(vocab: &Vocab, nsc: &[NscExample]) -> Vec<JointItem> {
    let limits = SequenceLimits::for_context(128);
    nsc.iter()
        .map(|e| joint_item(e, vocab, &[SentenceInput::Full], &limits).expect("joint item"))
        .collect()
}
