mod support;

use coins_core::decoding::tabular::RandomTable;
use coins_core::decoding::{beam_search, decode, greedy, DecodeConfig};
use coins_core::lm::{LanguageModel, LmConfig};
use coins_core::tokenizer::EOS;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::enumerate::{argmax, outputs, sequence_log_prob};

fn cfg(width: usize, max_new: usize, stop: Option<u32>) -> DecodeConfig {
    DecodeConfig {
        beam_width: width,
        max_new_tokens: max_new,
        stop_token: stop,
        length_normalization: false,
    }
}

#[test]
fn enumeration_counts_are_complete() {
    // No stop: V^L strings. With a stop: sum over k < L of (V-1)^k, plus (V-1)^L.
    assert_eq!(outputs(3, 3, None).len(), 27);
    assert_eq!(outputs(3, 3, Some(0)).len(), 1 + 2 + 4 + 8);
}

#[test]
fn full_width_beam_equals_enumerated_argmax() {
    let mut checked = 0;
    for vocab in 2..=5usize {
        for len in 1..=3usize {
            for seed in 0..20u64 {
                let table = RandomTable {
                    vocab,
                    seed: seed * 31 + vocab as u64,
                    temperature: 1.5,
                };
                for stop in [None, Some(0), Some(vocab as u32 - 1)] {
                    let c = cfg(vocab.pow(len as u32), len, stop);
                    let (best, score) = argmax(&table, &[0], &c).unwrap();
                    let got = beam_search(&table, &[0], &c).unwrap();
                    assert_eq!(
                        got.generated(),
                        best.as_slice(),
                        "V={vocab} L={len} seed={seed} stop={stop:?}"
                    );
                    assert!((got.score - score).abs() < 1e-12);
                    checked += 1;
                }
            }
        }
    }
    assert_eq!(checked, 4 * 3 * 20 * 3);
}

#[test]
fn stop_free_beam_is_exact_at_width_v_pow_l_minus_1() {
    for vocab in 2..=5usize {
        for len in 1..=3usize {
            for seed in 0..20u64 {
                let table = RandomTable {
                    vocab,
                    seed: seed ^ 0xbeef,
                    temperature: 2.0,
                };
                let c = cfg(vocab.pow(len as u32 - 1), len, None);
                let (best, _) = argmax(&table, &[0], &c).unwrap();
                assert_eq!(beam_search(&table, &[0], &c).unwrap().generated(), best.as_slice());
            }
        }
    }
}

#[test]
fn reported_log_prob_matches_rescoring() {
    let table = RandomTable {
        vocab: 5,
        seed: 3,
        temperature: 1.0,
    };
    for width in [1, 2, 3, 7] {
        let d = decode(&table, &[1, 2], &cfg(width, 4, Some(4))).unwrap();
        let lp = sequence_log_prob(&table, &[1, 2], d.generated()).unwrap();
        assert!((d.log_prob - lp).abs() < 1e-12);
    }
}

#[test]
fn beam_of_one_is_greedy_on_random_prompts() {
    let model = LanguageModel::<f32>::new_random(LmConfig::toy(17), 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..100 {
        let len = rng.gen_range(1..6);
        let prompt: Vec<u32> = (0..len).map(|_| rng.gen_range(0..17)).collect();
        let c = cfg(1, 8, Some(EOS));
        let b = beam_search(&model, &prompt, &c).unwrap();
        let g = greedy(&model, &prompt, &c).unwrap();
        assert_eq!(b.ids, g.ids);
        assert_eq!(b.finished, g.finished);
        assert!((b.log_prob - g.log_prob).abs() < 1e-9);
    }
}
