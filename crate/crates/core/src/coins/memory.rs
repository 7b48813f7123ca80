use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Final-layer hidden states of one iteration's rule tokens, zero-padded to
/// the memory's row count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryBlock {
    /// Rows holding real tokens; the rest are padding.
    pub len: usize,
    /// `max_rule_tokens × hidden`, row-major.
    pub data: Vec<f64>,
}

/// Append-only store of per-iteration rule representations, logically
/// `iterations × max_rule_tokens × hidden`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleMemory {
    pub max_rule_tokens: usize,
    pub hidden: usize,
    blocks: Vec<MemoryBlock>,
}

impl RuleMemory {
    pub fn new(max_rule_tokens: usize, hidden: usize) -> Self {
        Self {
            max_rule_tokens,
            hidden,
            blocks: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn blocks(&self) -> &[MemoryBlock] {
        &self.blocks
    }

    /// Appends `rows` (`k × hidden`, `k ≤ max_rule_tokens`).
    pub fn push(&mut self, rows: &[f64]) -> Result<()> {
        if !rows.len().is_multiple_of(self.hidden.max(1)) {
            return Err(Error::Contract(format!(
                "memory rows of {} values are not a multiple of hidden size {}",
                rows.len(),
                self.hidden
            )));
        }
        let len = rows.len() / self.hidden.max(1);
        if len > self.max_rule_tokens {
            return Err(Error::Length {
                len,
                max: self.max_rule_tokens,
            });
        }
        let mut data = rows.to_vec();
        data.resize(self.max_rule_tokens * self.hidden, 0.0);
        self.blocks.push(MemoryBlock { len, data });
        Ok(())
    }

    /// `[iterations, max_rule_tokens, hidden]`.
    pub fn to_tensor(&self) -> Tensor<f64> {
        let data: Vec<f64> = self.blocks.iter().flat_map(|b| b.data.iter().copied()).collect();
        Tensor::new(vec![self.blocks.len(), self.max_rule_tokens, self.hidden], data).expect("consistent blocks")
    }

    pub fn to_checkpoint(&self) -> Checkpoint<f64> {
        Checkpoint {
            tensors: vec![("memory".into(), self.to_tensor())],
            meta: serde_json::json!({
                "lengths": self.blocks.iter().map(|b| b.len).collect::<Vec<_>>(),
            }),
        }
    }
}
