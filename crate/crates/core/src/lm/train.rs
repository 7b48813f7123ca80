//! Minibatch training of one or more models on a shared objective.
//!
//! Every item of a batch gets its own tape, so items run in parallel; the
//! per-item gradients are reduced in item order, which keeps results
//! independent of thread scheduling.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{clip_grad_norm, AdamConfig, AdamState};
use super::model::{BoundParams, LanguageModel, LmWeights};
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Global L2 bound per model; off when absent.
    #[serde(default)]
    pub grad_clip: Option<f64>,
    /// Stops after this many optimizer steps in total.
    #[serde(default)]
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            epochs: 5,
            learning_rate: 1e-5,
            seed: 0,
            grad_clip: None,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if matches!(self.grad_clip, Some(c) if c.is_nan() || c <= 0.0) {
            return Err(Error::Config("grad_clip must be positive".into()));
        }
        Ok(())
    }
}

/// Per-item objective: given the bound parameters of every model and one
/// RNG per model, returns one scalar loss per term.
pub trait Objective<T: Scalar, I>: Sync {
    fn losses(
        &self,
        models: &[LanguageModel<T>],
        tape: &mut Tape<T>,
        params: &[BoundParams],
        item: &I,
        rngs: &mut [ChaCha8Rng],
    ) -> Result<Vec<Var>>;
}

impl<T, I, F> Objective<T, I> for F
where
    T: Scalar,
    F: Fn(&[LanguageModel<T>], &mut Tape<T>, &[BoundParams], &I, &mut [ChaCha8Rng]) -> Result<Vec<Var>> + Sync,
{
    fn losses(
        &self,
        models: &[LanguageModel<T>],
        tape: &mut Tape<T>,
        params: &[BoundParams],
        item: &I,
        rngs: &mut [ChaCha8Rng],
    ) -> Result<Vec<Var>> {
        self(models, tape, params, item, rngs)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    /// Batch mean of each unweighted loss term.
    pub terms: Vec<f64>,
    /// Batch mean of the weighted sum.
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub steps: usize,
    pub terms: Vec<f64>,
    pub total: f64,
}

/// Loss, term values and per-model gradients of one item.
pub struct ItemGrads<T> {
    pub terms: Vec<f64>,
    pub total: f64,
    pub grads: Vec<LmWeights<T>>,
}

fn mix(mut x: u64) -> u64 {
    // splitmix64 finalizer
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Stream for `model` while processing `item` of optimizer step `step`.
pub fn item_rng(seed: u64, step: u64, item: usize, model: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(mix(seed) ^ step) ^ item as u64) ^ model as u64)
}

pub struct Trainer<T> {
    pub models: Vec<LanguageModel<T>>,
    pub optims: Vec<AdamState<T>>,
    pub config: TrainConfig,
    /// Multiplies each loss term before summation.
    pub term_weights: Vec<f64>,
    pub step: u64,
    names: Vec<Vec<String>>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(models: Vec<LanguageModel<T>>, config: TrainConfig, term_weights: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let optims = models
            .iter()
            .map(|m| AdamState::new(AdamConfig::with_lr(config.learning_rate), &m.weights))
            .collect();
        let names = models.iter().map(LanguageModel::param_names).collect();
        Ok(Self {
            models,
            optims,
            config,
            term_weights,
            step: 0,
            names,
        })
    }

    /// Forward and backward for one item with the current weights.
    pub fn item_grads<I, O: Objective<T, I>>(&self, objective: &O, item: &I, index: usize) -> Result<ItemGrads<T>> {
        let mut tape = Tape::new();
        let params: Vec<BoundParams> = self.models.iter().map(|m| m.bind(&mut tape)).collect();
        let mut rngs: Vec<ChaCha8Rng> = (0..self.models.len())
            .map(|m| item_rng(self.config.seed, self.step, index, m))
            .collect();
        let losses = objective.losses(&self.models, &mut tape, &params, item, &mut rngs)?;
        if losses.len() != self.term_weights.len() {
            return Err(Error::Contract(format!(
                "objective returned {} terms, {} weights configured",
                losses.len(),
                self.term_weights.len()
            )));
        }
        let terms: Vec<f64> = losses.iter().map(|&l| tape.value(l).item().f64()).collect();
        let mut total: Option<Var> = None;
        for (&l, &w) in losses.iter().zip(&self.term_weights) {
            let l = if w == 1.0 { l } else { tape.scale(l, T::c(w)) };
            total = Some(match total {
                Some(t) => tape.add(t, l)?,
                None => l,
            });
        }
        let total = total.ok_or_else(|| Error::Contract("objective returned no loss terms".into()))?;
        tape.backward(total)?;
        Ok(ItemGrads {
            terms,
            total: tape.value(total).item().f64(),
            grads: params.iter().map(|p| p.grads(&tape)).collect(),
        })
    }

    /// One optimizer step on the batch mean loss.
    pub fn train_step<I: Sync, O: Objective<T, I>>(&mut self, objective: &O, batch: &[&I]) -> Result<StepReport> {
        if batch.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let this = &*self;
        let per_item: Vec<ItemGrads<T>> = batch
            .par_iter()
            .enumerate()
            .map(|(i, item)| this.item_grads(objective, *item, i))
            .collect::<Result<_>>()?;
        let inv = 1.0 / batch.len() as f64;
        let mut iter = per_item.into_iter();
        let first = iter.next().expect("non-empty batch");
        let mut grads = first.grads;
        let mut terms = first.terms;
        let mut total = first.total;
        for it in iter {
            for (g, h) in grads.iter_mut().zip(&it.grads) {
                g.add_assign(h)?;
            }
            for (a, b) in terms.iter_mut().zip(&it.terms) {
                *a += b;
            }
            total += it.total;
        }
        for (m, (g, opt)) in grads.iter_mut().zip(&mut self.optims).enumerate() {
            g.scale(T::c(inv));
            if let Some(c) = self.config.grad_clip {
                clip_grad_norm(g, c);
            }
            opt.update(&mut self.models[m].weights, g, &self.names[m])?;
        }
        self.step += 1;
        Ok(StepReport {
            step: self.step,
            terms: terms.iter().map(|t| t * inv).collect(),
            total: total * inv,
        })
    }

    fn budget_left(&self) -> bool {
        self.config.max_steps.is_none_or(|m| (self.step as usize) < m)
    }

    /// One shuffled pass over `items`; stops early when the step budget is
    /// spent. Returns `None` if no step ran.
    pub fn run_epoch<I: Sync, O: Objective<T, I>>(
        &mut self,
        objective: &O,
        items: &[I],
        epoch: usize,
    ) -> Result<Option<EpochReport>> {
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(
            mix(self.config.seed ^ mix(epoch as u64)),
        ));
        let mut reports = Vec::new();
        for chunk in order.chunks(self.config.batch_size) {
            if !self.budget_left() {
                break;
            }
            let batch: Vec<&I> = chunk.iter().map(|&i| &items[i]).collect();
            let r = self.train_step(objective, &batch)?;
            log::debug!("step {} total {:.4} terms {:?}", r.step, r.total, r.terms);
            reports.push(r);
        }
        if reports.is_empty() {
            return Ok(None);
        }
        let n = reports.len() as f64;
        let k = reports[0].terms.len();
        let terms = (0..k)
            .map(|j| reports.iter().map(|r| r.terms[j]).sum::<f64>() / n)
            .collect();
        let total = reports.iter().map(|r| r.total).sum::<f64>() / n;
        log::info!("epoch {epoch}: {} steps, mean loss {total:.4}", reports.len());
        Ok(Some(EpochReport {
            epoch,
            steps: reports.len(),
            terms,
            total,
        }))
    }

    /// Runs `config.epochs` epochs (or until `max_steps`).
    pub fn fit<I: Sync, O: Objective<T, I>>(&mut self, objective: &O, items: &[I]) -> Result<Vec<EpochReport>> {
        if items.is_empty() {
            return Err(Error::Contract("no training items".into()));
        }
        let mut out = Vec::new();
        for epoch in 0..self.config.epochs {
            match self.run_epoch(objective, items, epoch)? {
                Some(r) => out.push(r),
                None => break,
            }
        }
        Ok(out)
    }

    pub fn into_models(self) -> Vec<LanguageModel<T>> {
        self.models
    }
}
