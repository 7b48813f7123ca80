//! Prefix logits must not depend on later tokens.

use coins_core::autograd::Tape;
use coins_core::lm::{LanguageModel, LmConfig};
use coins_core::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn prefix_rows(logits: &Tensor<f64>, rows: usize) -> Vec<u64> {
    let cols = logits.shape()[1];
    logits.data()[..rows * cols].iter().map(|v| v.to_bits()).collect()
}

fn taped_logits(model: &LanguageModel<f64>, ids: &[u32]) -> Result<Tensor<f64>> {
    let mut tape = Tape::new();
    let params = model.bind_frozen(&mut tape);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let fwd = model.forward(&mut tape, &params, ids, false, &mut rng)?;
    Ok(tape.value(fwd.logits).clone())
}

/// Number of sequences (out of `count`) whose logits before a random cut
/// change when every token from the cut on is redrawn. Alternates between
/// the taped and untaped forward passes.
pub fn violations(count: usize, seed: u64) -> Result<usize> {
    let model = LanguageModel::<f64>::new_random(LmConfig::toy(23), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut bad = 0;
    for k in 0..count {
        let len = rng.gen_range(2..=16);
        let cut = rng.gen_range(1..len);
        let a: Vec<u32> = (0..len).map(|_| rng.gen_range(0..23)).collect();
        let mut b = a.clone();
        for t in &mut b[cut..] {
            *t = (*t + rng.gen_range(1..23)) % 23;
        }
        let (la, lb) = if k % 2 == 0 {
            (model.forward_eval(&a)?.0, model.forward_eval(&b)?.0)
        } else {
            (taped_logits(&model, &a)?, taped_logits(&model, &b)?)
        };
        if prefix_rows(&la, cut) != prefix_rows(&lb, cut) {
            bad += 1;
        }
    }
    Ok(bad)
}
