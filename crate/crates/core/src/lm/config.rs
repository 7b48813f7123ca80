use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub vocab: usize,
    pub max_positions: usize,
    pub dropout: f64,
    #[serde(default = "default_true")]
    pub tie_output_to_embedding: bool,
    #[serde(default = "default_eps")]
    pub layer_norm_eps: f64,
}

fn default_true() -> bool {
    true
}

fn default_eps() -> f64 {
    1e-5
}

impl LmConfig {
    /// Desk-scale default: 2 layers, 64 hidden, 2 heads.
    pub fn toy(vocab: usize) -> Self {
        Self {
            layers: 2,
            hidden: 64,
            heads: 2,
            vocab,
            max_positions: 128,
            dropout: 0.1,
            tie_output_to_embedding: true,
            layer_norm_eps: 1e-5,
        }
    }

    /// GPT-2 small geometry: 12 layers, 768 hidden, 12 heads.
    pub fn reference(vocab: usize) -> Self {
        Self {
            layers: 12,
            hidden: 768,
            heads: 12,
            vocab,
            max_positions: 1024,
            dropout: 0.1,
            tie_output_to_embedding: true,
            layer_norm_eps: 1e-5,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.layers == 0 || self.hidden == 0 || self.heads == 0 || self.vocab == 0 || self.max_positions == 0 {
            return bad(format!("model dimensions must be positive: {self:?}"));
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return bad(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden, self.heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} not in [0, 1)", self.dropout));
        }
        if self.layer_norm_eps <= 0.0 {
            return bad("layer_norm_eps must be positive".into());
        }
        Ok(())
    }
}

/// Which slot of the pipeline a checkpoint fills.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelRole {
    CsiGen,
    CsiSpec,
    Sentence,
    Baseline,
}
