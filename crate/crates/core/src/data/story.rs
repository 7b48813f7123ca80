use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{escape_reserved, Special};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Story {
    pub id: String,
    pub sentences: Vec<String>,
}

impl Story {
    pub fn new(id: impl Into<String>, sentences: Vec<String>) -> Result<Self> {
        let story = Self {
            id: id.into(),
            sentences,
        };
        story.validate()?;
        Ok(story)
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sentences.len() < 3 {
            return Err(Error::Schema(format!(
                "story {} has {} sentences, at least 3 required",
                self.id,
                self.sentences.len()
            )));
        }
        if let Some(i) = self.sentences.iter().position(|s| s.trim().is_empty()) {
            return Err(Error::Schema(format!("story {} sentence {} is empty", self.id, i + 1)));
        }
        Ok(())
    }

    /// Collapses whitespace and escapes reserved token forms in every sentence.
    pub fn sanitized(&self) -> Self {
        Self {
            id: self.id.clone(),
            sentences: self
                .sentences
                .iter()
                .map(|s| escape_reserved(&s.split_whitespace().collect::<Vec<_>>().join(" ")))
                .collect(),
        }
    }
}

/// The incomplete story seen by the models: the known or generated prefix,
/// the gap marker, then the ending.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoryState {
    pub prefix: Vec<String>,
    pub ending: String,
}

impl StoryState {
    pub fn new(prefix: Vec<String>, ending: impl Into<String>) -> Self {
        Self {
            prefix,
            ending: ending.into(),
        }
    }

    /// Initial completion state: the first two sentences and the last.
    pub fn initial(story: &Story) -> Result<Self> {
        if story.len() < 4 {
            return Err(Error::Schema(format!(
                "story {} needs at least 4 sentences for completion",
                story.id
            )));
        }
        Ok(Self::new(
            story.sentences[..2].to_vec(),
            story.sentences[story.len() - 1].clone(),
        ))
    }

    /// Teacher-forced state at controller iteration `i` (1-based, `2..n`):
    /// the gold sentences `s_1..s_i` before the gap.
    pub fn teacher_forced(story: &Story, iteration: usize) -> Result<Self> {
        let n = story.len();
        if iteration < 2 || iteration > n.saturating_sub(2).max(2) || n < 4 {
            return Err(Error::Range {
                what: "iteration",
                value: iteration as i64,
                min: 2,
                max: n as i64 - 2,
            });
        }
        Ok(Self::new(
            story.sentences[..iteration].to_vec(),
            story.sentences[n - 1].clone(),
        ))
    }

    /// The most recent prefix sentence.
    pub fn current(&self) -> &str {
        self.prefix.last().map(String::as_str).unwrap_or("")
    }

    /// Inserts a sentence directly before the gap.
    pub fn update(&self, sentence: impl Into<String>) -> Self {
        let mut next = self.clone();
        next.prefix.push(sentence.into());
        next
    }

    /// `s_1 ... s_i [SEP] s_n`.
    pub fn render(&self) -> String {
        format!("{} {} {}", self.prefix.join(" "), Special::Sep.surface(), self.ending)
    }

    /// `s_1 ... s_i [SEP]`, the context without the story ending.
    pub fn render_without_ending(&self) -> String {
        format!("{} {}", self.prefix.join(" "), Special::Sep.surface())
    }
}
