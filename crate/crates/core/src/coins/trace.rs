use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RunMode;
use crate::data::jsonl;
use crate::decoding::DecodeConfig;
use crate::error::{Error, Result};

/// One controller iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub effect_rules: Vec<String>,
    pub cause_rules: Vec<String>,
    /// Rules the sentence model saw, after truncation.
    pub rules: Vec<String>,
    pub sentence: String,
    /// Summed log-probabilities of the decoded rule bundles, when decoded.
    pub effect_score: Option<f64>,
    pub cause_score: Option<f64>,
    pub sentence_score: f64,
    pub sentence_finished: bool,
    pub effect_input: Option<String>,
    pub cause_input: Option<String>,
    pub sentence_input: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub story_id: String,
    pub mode: RunMode,
    pub rule_decode: DecodeConfig,
    pub sentence_decode: DecodeConfig,
    pub entries: Vec<TraceEntry>,
    /// Set when a stage failed; `entries` then holds the iterations done.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub story_id: String,
    pub mode: RunMode,
    pub rule_decode: DecodeConfig,
    pub sentence_decode: DecodeConfig,
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl GenerationTrace {
    pub fn summary(&self) -> TraceSummary {
        TraceSummary {
            story_id: self.story_id.clone(),
            mode: self.mode,
            rule_decode: self.rule_decode.clone(),
            sentence_decode: self.sentence_decode.clone(),
            iterations: self.entries.len(),
            error: self.error.clone(),
        }
    }

    /// Writes `<stem>.jsonl` (one entry per line) and `<stem>.json`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        jsonl::write(&dir.join(format!("{stem}.jsonl")), &self.entries)?;
        let p = dir.join(format!("{stem}.json"));
        std::fs::write(&p, serde_json::to_string_pretty(&self.summary())? + "\n").map_err(|e| Error::io(&p, e))
    }

    pub fn read(dir: &Path, stem: &str) -> Result<Self> {
        let p = dir.join(format!("{stem}.json"));
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let s: TraceSummary = serde_json::from_str(&text)?;
        let entries: Vec<TraceEntry> = jsonl::read(&dir.join(format!("{stem}.jsonl")))?;
        if entries.len() != s.iterations {
            return Err(Error::Schema(format!(
                "trace {stem}: summary lists {} iterations, file has {}",
                s.iterations,
                entries.len()
            )));
        }
        Ok(Self {
            story_id: s.story_id,
            mode: s.mode,
            rule_decode: s.rule_decode,
            sentence_decode: s.sentence_decode,
            entries,
            error: s.error,
        })
    }
}
