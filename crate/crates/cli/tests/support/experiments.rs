//! Training experiments on synthetic corpora where the middle sentences
//! follow from the beginning, the ending and the rules.

use std::collections::{BTreeMap, HashMap};

use coins_core::coins::{
    baseline_sequence, joint_item, run, run_baseline, run_coins, sentence_sequences, ControllerConfig, Models, RunMode,
    SequenceLimits,
};
use coins_core::data::serialize::SentenceInput;
use coins_core::data::synthetic::{generate, SyntheticConfig};
use coins_core::data::tasks::{attach_annotated_rules, build_nsc_corpus};
use coins_core::data::{NscExample, RuleFlavor};
use coins_core::lm::{
    mean_token_nll, JointItem, JointObjective, LanguageModel, LmConfig, MaskedSequence, SequenceObjective, TrainConfig,
    Trainer,
};
use coins_core::metrics::{align, bleu, MetricConfig};
use coins_core::Vocab;

fn corpus(stories: usize, seed: u64) -> (Vocab, Vec<NscExample>) {
    let c = generate(&SyntheticConfig {
        stories,
        sentences: 5,
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
    let mut nsc = build_nsc_corpus(&c.stories);
    attach_annotated_rules(&mut nsc, &c.records, RuleFlavor::General);
    (vocab, nsc)
}

fn limits() -> SequenceLimits {
    SequenceLimits::for_context(128)
}

fn items(vocab: &Vocab, examples: &[NscExample], inputs: &[SentenceInput]) -> Vec<JointItem> {
    examples
        .iter()
        .map(|e| joint_item(e, vocab, inputs, &limits()).expect("joint item"))
        .collect()
}

pub struct Memorization {
    pub steps: u64,
    pub sentence_nll: f64,
    pub rule_nll: f64,
    pub exact: usize,
    pub stories: usize,
}

/// Trains both toy models jointly on 32 stories for 2,000 steps, then
/// completes the same stories.
pub fn memorization() -> Memorization {
    let (vocab, nsc) = corpus(32, 7);
    let items = items(&vocab, &nsc, &[SentenceInput::Full]);
    let cfg = TrainConfig {
        batch_size: 4,
        epochs: usize::MAX,
        learning_rate: 1e-3,
        seed: 0,
        grad_clip: Some(1.0),
        max_steps: Some(2000),
    };
    let theta = LanguageModel::<f32>::new_random(LmConfig::toy(vocab.len()), 1).unwrap();
    let beta = LanguageModel::<f32>::new_random(LmConfig::toy(vocab.len()), 2).unwrap();
    let mut t = Trainer::new(vec![theta, beta], cfg, vec![1.0, 1.0]).unwrap();
    let mut epoch = 0;
    while t.run_epoch(&JointObjective, &items, epoch).unwrap().is_some() {
        epoch += 1;
    }
    let sentences: Vec<MaskedSequence> = items.iter().flat_map(|i| i.sentence.clone()).collect();
    let rules: Vec<MaskedSequence> = items.iter().flat_map(|i| i.rules.clone()).collect();
    let models = Models {
        vocab: &vocab,
        csi: Some(&t.models[1]),
        sentence: &t.models[0],
    };
    let cc = ControllerConfig::default();
    let exact = nsc
        .iter()
        .filter(|e| run_coins(&models, e, &cc).unwrap().generated == e.targets)
        .count();
    Memorization {
        steps: t.step,
        sentence_nll: mean_token_nll(&t.models[0], &sentences).unwrap(),
        rule_nll: mean_token_nll(&t.models[1], &rules).unwrap(),
        exact,
        stories: nsc.len(),
    }
}

/// Held-out scores of one seed.
pub struct HeldOut {
    /// Target NLL of the sentence model given the provided rules.
    pub oracle_nll: f64,
    /// Target NLL of the rule-free baseline on the same targets.
    pub baseline_nll: f64,
    pub bleu1: HashMap<RunMode, f64>,
    pub baseline_bleu1: f64,
}

pub const HELDOUT_MODES: [RunMode; 4] = [RunMode::Oracle, RunMode::Full, RunMode::IrWoSe, RunMode::NoIrWoSe];

/// Trains on 192 synthetic stories and scores 48 unseen ones. The sentence
/// model sees rule-conditioned and rule-free layouts so that every mode's
/// input is in distribution.
pub fn held_out(seed: u64) -> HeldOut {
    let (vocab, nsc) = corpus(240, 11);
    let (train, test) = nsc.split_at(192);
    let inputs = [
        SentenceInput::Full,
        SentenceInput::PrefixOnly,
        SentenceInput::RulesAndPrefix,
    ];
    let joint = items(&vocab, train, &inputs);
    let base: Vec<Vec<MaskedSequence>> = train
        .iter()
        .map(|e| vec![baseline_sequence(e, &vocab, &limits()).unwrap()])
        .collect();
    let cfg = TrainConfig {
        batch_size: 8,
        epochs: 25,
        learning_rate: 3e-3,
        seed,
        grad_clip: Some(1.0),
        max_steps: None,
    };
    let lc = LmConfig::toy(vocab.len());
    let theta = LanguageModel::<f32>::new_random(lc.clone(), seed * 3 + 1).unwrap();
    let beta = LanguageModel::<f32>::new_random(lc.clone(), seed * 3 + 2).unwrap();
    let mut tj = Trainer::new(vec![theta, beta], cfg.clone(), vec![1.0, 1.0]).unwrap();
    tj.fit(&JointObjective, &joint).unwrap();
    let baseline = LanguageModel::<f32>::new_random(lc, seed * 3 + 3).unwrap();
    let mut tb = Trainer::new(vec![baseline], cfg, vec![1.0]).unwrap();
    tb.fit(&SequenceObjective, &base).unwrap();
    let (theta, beta, baseline) = (&tj.models[0], &tj.models[1], &tb.models[0]);

    let oracle_seqs: Vec<MaskedSequence> = test
        .iter()
        .flat_map(|e| sentence_sequences(e, &vocab, &[SentenceInput::Full], &limits()).unwrap())
        .collect();
    let base_seqs: Vec<MaskedSequence> = test
        .iter()
        .map(|e| baseline_sequence(e, &vocab, &limits()).unwrap())
        .collect();

    let gold: BTreeMap<String, String> = test.iter().map(|e| (e.id.clone(), e.targets.join(" "))).collect();
    let mc = MetricConfig::default();
    let score = |sys: BTreeMap<String, String>| bleu(&align(&sys, &gold).unwrap(), 1, &mc).unwrap();
    let models = Models {
        vocab: &vocab,
        csi: Some(beta),
        sentence: theta,
    };
    let cc = ControllerConfig::default();
    let bleu1 = HELDOUT_MODES
        .iter()
        .map(|&mode| {
            let sys = test
                .iter()
                .map(|e| (e.id.clone(), run(&models, e, mode, &cc).unwrap().generated.join(" ")))
                .collect();
            (mode, score(sys))
        })
        .collect();
    let sys = test
        .iter()
        .map(|e| {
            let (s, _) = run_baseline(baseline, &vocab, e, &cc.sentence_decode).unwrap();
            (e.id.clone(), s.join(" "))
        })
        .collect();
    HeldOut {
        oracle_nll: mean_token_nll(theta, &oracle_seqs).unwrap(),
        baseline_nll: mean_token_nll(baseline, &base_seqs).unwrap(),
        bleu1,
        baseline_bleu1: score(sys),
    }
}
