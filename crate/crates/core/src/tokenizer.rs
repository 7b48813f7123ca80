//! Word-level tokenizer with a fixed block of reserved special tokens.
//!
//! Text is split on whitespace; within a whitespace token, runs of word
//! characters (alphanumerics and `_`) form one token and every other
//! character is a token of its own. Special tokens are recognized by their
//! exact bracketed surface form (`[SEP]`, `[EOK]`, ...) before splitting;
//! raw corpus text passes through [`escape_reserved`] so it can never
//! produce them.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const VOCAB_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Special {
    Pad,
    Unk,
    Sos,
    Eos,
    Sep,
    Eok,
    Mask,
    RelEffect,
    RelCause,
}

impl Special {
    pub const ALL: [Special; 9] = [
        Special::Pad,
        Special::Unk,
        Special::Sos,
        Special::Eos,
        Special::Sep,
        Special::Eok,
        Special::Mask,
        Special::RelEffect,
        Special::RelCause,
    ];

    /// Fixed id: specials occupy `0..9` in declaration order.
    pub const fn id(self) -> TokenId {
        self as TokenId
    }

    pub const fn surface(self) -> &'static str {
        match self {
            Special::Pad => "[PAD]",
            Special::Unk => "[UNK]",
            Special::Sos => "[SOS]",
            Special::Eos => "[EOS]",
            Special::Sep => "[SEP]",
            Special::Eok => "[EOK]",
            Special::Mask => "[MASK]",
            Special::RelEffect => "[EFFECT]",
            Special::RelCause => "[CAUSE]",
        }
    }

    pub const fn key(self) -> &'static str {
        match self {
            Special::Pad => "pad",
            Special::Unk => "unk",
            Special::Sos => "sos",
            Special::Eos => "eos",
            Special::Sep => "sep",
            Special::Eok => "eok",
            Special::Mask => "mask",
            Special::RelEffect => "rel_effect",
            Special::RelCause => "rel_cause",
        }
    }

    pub fn from_surface(s: &str) -> Option<Special> {
        Special::ALL.into_iter().find(|sp| sp.surface() == s)
    }
}

pub const SOS: TokenId = Special::Sos.id();
pub const EOS: TokenId = Special::Eos.id();
pub const SEP: TokenId = Special::Sep.id();
pub const EOK: TokenId = Special::Eok.id();
pub const UNK: TokenId = Special::Unk.id();

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn split_plain(chunk: &str, lowercase: bool, out: &mut Vec<String>) {
    let mut word = String::new();
    for c in chunk.chars() {
        if is_word_char(c) {
            word.push(c);
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !c.is_whitespace() {
            out.push(c.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    if lowercase {
        for t in out.iter_mut() {
            if t.chars().any(char::is_uppercase) {
                *t = t.to_lowercase();
            }
        }
    }
}

/// Splits text into surface tokens, recognizing special-token surface forms.
pub fn pre_tokenize(text: &str, lowercase: bool) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut rest = chunk;
        while !rest.is_empty() {
            let hit = rest.find('[').and_then(|start| {
                let end = rest[start..].find(']')? + start + 1;
                Special::from_surface(&rest[start..end]).map(|sp| (start, end, sp))
            });
            match hit {
                Some((start, end, sp)) => {
                    let mut words = Vec::new();
                    split_plain(&rest[..start], lowercase, &mut words);
                    out.append(&mut words);
                    out.push(sp.surface().to_string());
                    rest = &rest[end..];
                }
                None => {
                    let mut words = Vec::new();
                    split_plain(rest, lowercase, &mut words);
                    out.append(&mut words);
                    rest = "";
                }
            }
        }
    }
    out
}

/// Normalized token strings of plain text (no special recognition).
pub fn normalize_tokens(text: &str, lowercase: bool) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        split_plain(chunk, lowercase, &mut out);
    }
    out
}

/// Normalized single-space form of plain text.
pub fn normalize_text(text: &str, lowercase: bool) -> String {
    normalize_tokens(text, lowercase).join(" ")
}

/// Breaks reserved surface forms in corpus text apart so that they
/// tokenize as ordinary punctuation and words.
pub fn escape_reserved(text: &str) -> String {
    let mut out = text.to_string();
    for sp in Special::ALL {
        let s = sp.surface();
        if out.contains(s) {
            let inner = &s[1..s.len() - 1];
            out = out.replace(s, &format!("[ {inner} ]"));
        }
    }
    out
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    version: u32,
    lowercase: bool,
    specials: BTreeMap<String, TokenId>,
    tokens: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    lowercase: bool,
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocab {
    /// Builds a vocabulary from corpus text: the specials followed by the
    /// most frequent surface tokens with at least `min_freq` occurrences,
    /// ties broken lexicographically, capped at `max_size` entries in total.
    pub fn train<'a, I>(corpus: I, max_size: usize, min_freq: usize, lowercase: bool) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let n_special = Special::ALL.len();
        if max_size < n_special {
            return Err(Error::Config(format!(
                "vocabulary size {max_size} is smaller than the {n_special} reserved specials"
            )));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut seen_any = false;
        for text in corpus {
            seen_any = true;
            for tok in normalize_tokens(&escape_reserved(text), lowercase) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        if !seen_any {
            return Err(Error::Config("cannot train a vocabulary on an empty corpus".into()));
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_freq.max(1)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size - n_special);

        let tokens = Special::ALL
            .iter()
            .map(|s| s.surface().to_string())
            .chain(ranked.into_iter().map(|(t, _)| t))
            .collect();
        Ok(Self::from_tokens(tokens, lowercase))
    }

    fn from_tokens(tokens: Vec<String>, lowercase: bool) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        Self {
            lowercase,
            tokens,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        (id as usize) < Special::ALL.len()
    }

    /// Encodes text that may contain special surface forms.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        pre_tokenize(text, self.lowercase)
            .iter()
            .map(|t| self.id(t).unwrap_or(UNK))
            .collect()
    }

    /// Joins tokens with single spaces; specials render as their surface form.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or(Special::Unk.surface()))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn to_json(&self) -> Result<String> {
        let file = VocabFile {
            version: VOCAB_FORMAT_VERSION,
            lowercase: self.lowercase,
            specials: Special::ALL.iter().map(|s| (s.key().to_string(), s.id())).collect(),
            tokens: self.tokens.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let file: VocabFile = serde_json::from_str(json)?;
        if file.version != VOCAB_FORMAT_VERSION {
            return Err(Error::Schema(format!("unsupported vocab version {}", file.version)));
        }
        for sp in Special::ALL {
            let id = file.specials.get(sp.key()).copied();
            if id != Some(sp.id()) || file.tokens.get(sp.id() as usize).map(String::as_str) != Some(sp.surface()) {
                return Err(Error::Schema(format!(
                    "vocab special {} is missing or misplaced",
                    sp.key()
                )));
            }
        }
        Ok(Self::from_tokens(file.tokens, file.lowercase))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let json = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&json)
    }
}
