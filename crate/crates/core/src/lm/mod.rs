//! Language model, its losses, the optimizer and the training loop.

pub mod adam;
pub mod config;
pub mod loss;
pub mod model;
pub mod train;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{clip_grad_norm, AdamConfig, AdamState};
pub use config::{LmConfig, ModelRole};
pub use loss::{masked_nll, mean_token_nll, perplexity, summed_nll, MaskedSequence};
pub use model::{BoundParams, ForwardVars, KvCache, LanguageModel, LmWeights, StepOutput};
pub use train::{EpochReport, Objective, StepReport, TrainConfig, Trainer};

use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::tensor::Scalar;

/// Teacher-forced sequences of one story for both models.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointItem {
    /// One sequence per iteration, rules + context → next sentence.
    pub sentence: Vec<MaskedSequence>,
    /// Effect and Cause rule sequences of every iteration.
    pub rules: Vec<MaskedSequence>,
}

/// Single-model objective: sum of per-sequence token-mean NLLs.
pub struct SequenceObjective;

impl<T: Scalar> Objective<T, Vec<MaskedSequence>> for SequenceObjective {
    fn losses(
        &self,
        models: &[LanguageModel<T>],
        tape: &mut Tape<T>,
        params: &[BoundParams],
        item: &Vec<MaskedSequence>,
        rngs: &mut [ChaCha8Rng],
    ) -> Result<Vec<Var>> {
        Ok(vec![summed_nll(
            &models[0],
            tape,
            &params[0],
            item,
            true,
            &mut rngs[0],
        )?])
    }
}

/// `[L_S(θ), L_I(β)]` with θ at index 0 and β at index 1. The two terms
/// touch disjoint parameters.
pub struct JointObjective;

impl<T: Scalar> Objective<T, JointItem> for JointObjective {
    fn losses(
        &self,
        models: &[LanguageModel<T>],
        tape: &mut Tape<T>,
        params: &[BoundParams],
        item: &JointItem,
        rngs: &mut [ChaCha8Rng],
    ) -> Result<Vec<Var>> {
        let (r0, r1) = rngs.split_at_mut(1);
        let ls = summed_nll(&models[0], tape, &params[0], &item.sentence, true, &mut r0[0])?;
        let li = summed_nll(&models[1], tape, &params[1], &item.rules, true, &mut r1[0])?;
        Ok(vec![ls, li])
    }
}

/// Sentence-only view of a joint item, for single-model training.
pub struct SentenceOnly;

impl<T: Scalar> Objective<T, JointItem> for SentenceOnly {
    fn losses(
        &self,
        models: &[LanguageModel<T>],
        tape: &mut Tape<T>,
        params: &[BoundParams],
        item: &JointItem,
        rngs: &mut [ChaCha8Rng],
    ) -> Result<Vec<Var>> {
        Ok(vec![summed_nll(
            &models[0],
            tape,
            &params[0],
            &item.sentence,
            true,
            &mut rngs[0],
        )?])
    }
}
