//! Run configuration: defaults, a TOML file, then command-line flags.

use std::path::Path;

use coins_core::coins::{ControllerConfig, RunMode, SequenceLimits};
use coins_core::data::serialize::SentenceInput;
use coins_core::data::tasks::CsiContext;
use coins_core::data::RuleFlavor;
use coins_core::decoding::DecodeConfig;
use coins_core::lm::{LmConfig, TrainConfig};
use coins_core::metrics::MetricConfig;
use coins_core::tokenizer::EOS;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub max_positions: usize,
    pub dropout: f64,
    pub tie_output_to_embedding: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let t = LmConfig::toy(1);
        Self {
            layers: t.layers,
            hidden: t.hidden,
            heads: t.heads,
            max_positions: t.max_positions,
            dropout: t.dropout,
            tie_output_to_embedding: t.tie_output_to_embedding,
        }
    }
}

impl ModelSection {
    pub fn lm_config(&self, vocab: usize) -> LmConfig {
        LmConfig {
            layers: self.layers,
            hidden: self.hidden,
            heads: self.heads,
            vocab,
            max_positions: self.max_positions,
            dropout: self.dropout,
            tie_output_to_embedding: self.tie_output_to_embedding,
            layer_norm_eps: 1e-5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub grad_clip: Option<f64>,
    pub max_steps: Option<usize>,
    /// Weight of the rule-generation loss in joint training.
    pub rule_loss_weight: f64,
    /// Sentence-model input layouts trained on, one sequence each.
    pub inputs: Vec<SentenceInput>,
    /// Condition the sentence model on rules decoded by the rule generator
    /// (refreshed every epoch) instead of the provided ones.
    pub condition_on_decoded_rules: bool,
    /// Story text the rule generator sees when trained from annotations.
    pub csi_context: CsiContext,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            batch_size: 4,
            epochs: 5,
            learning_rate: 1e-3,
            grad_clip: None,
            max_steps: None,
            rule_loss_weight: 1.0,
            inputs: vec![SentenceInput::Full],
            condition_on_decoded_rules: false,
            csi_context: CsiContext::Incomplete,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeSection {
    pub beam: usize,
    pub max_rule_tokens_generated: usize,
    pub max_sentence_tokens: usize,
    pub length_normalization: bool,
    /// Token budget of the joined rule block.
    pub max_rule_tokens: usize,
    /// Silver enrichment decodes greedily unless this is off.
    pub greedy_enrich: bool,
    pub all_sentences: bool,
}

impl Default for DecodeSection {
    fn default() -> Self {
        Self {
            beam: 5,
            max_rule_tokens_generated: 48,
            max_sentence_tokens: 24,
            length_normalization: false,
            max_rule_tokens: 96,
            greedy_enrich: true,
            all_sentences: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub dev_fraction: f64,
    pub test_fraction: f64,
    pub max_vocab: usize,
    pub min_freq: usize,
    pub lowercase: bool,
    pub synthetic_stories: usize,
    pub synthetic_sentences: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            dev_fraction: 0.1,
            test_fraction: 0.1,
            max_vocab: 50_000,
            min_freq: 1,
            lowercase: false,
            synthetic_stories: 64,
            synthetic_sentences: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub flavor: RuleFlavor,
    pub mode: RunMode,
    pub model: ModelSection,
    pub train: TrainSection,
    pub decode: DecodeSection,
    pub data: DataSection,
    pub metrics: MetricConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            flavor: RuleFlavor::General,
            mode: RunMode::Full,
            model: ModelSection::default(),
            train: TrainSection::default(),
            decode: DecodeSection::default(),
            data: DataSection::default(),
            metrics: MetricConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.train.batch_size,
            epochs: self.train.epochs,
            learning_rate: self.train.learning_rate,
            seed: self.seed,
            grad_clip: self.train.grad_clip,
            max_steps: self.train.max_steps,
        }
    }

    fn decode_config(&self, beam: usize, max_new: usize) -> DecodeConfig {
        DecodeConfig {
            beam_width: beam,
            max_new_tokens: max_new,
            stop_token: Some(EOS),
            length_normalization: self.decode.length_normalization,
        }
    }

    pub fn controller(&self) -> ControllerConfig {
        ControllerConfig {
            rule_decode: self.decode_config(self.decode.beam, self.decode.max_rule_tokens_generated),
            sentence_decode: self.decode_config(self.decode.beam, self.decode.max_sentence_tokens),
            max_rule_tokens: self.decode.max_rule_tokens,
            all_sentences: self.decode.all_sentences,
        }
    }

    pub fn enrich_decode(&self) -> DecodeConfig {
        let beam = if self.decode.greedy_enrich { 1 } else { self.decode.beam };
        self.decode_config(beam, self.decode.max_rule_tokens_generated)
    }

    pub fn limits(&self) -> SequenceLimits {
        SequenceLimits {
            max_len: self.model.max_positions,
            max_sentence_tokens: self.decode.max_sentence_tokens,
            max_bundle_tokens: self.decode.max_rule_tokens_generated,
            max_rule_tokens: self.decode.max_rule_tokens,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |e: coins_core::Error| CliError::Config(e.to_string());
        self.model.lm_config(16).validate().map_err(cfg)?;
        self.train_config().validate().map_err(cfg)?;
        self.controller().rule_decode.validate().map_err(cfg)?;
        self.controller().sentence_decode.validate().map_err(cfg)?;
        if self.train.inputs.is_empty() {
            return Err(CliError::Config(
                "train.inputs must name at least one input layout".into(),
            ));
        }
        if self.train.rule_loss_weight.is_nan() || self.train.rule_loss_weight < 0.0 {
            return Err(CliError::Config("train.rule_loss_weight must be non-negative".into()));
        }
        Ok(())
    }
}
