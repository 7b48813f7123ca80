//! Corpus BLEU, ROUGE-L, Distinct-n and Fleiss' kappa.
//!
//! Text is split with the tokenizer's pre-tokenization so scores are
//! computed over the same units the models generate.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::normalize_tokens;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPair {
    pub candidate: String,
    pub references: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    #[serde(default)]
    pub lowercase: bool,
    /// Add-one smoothing of the n ≥ 2 precisions.
    #[serde(default)]
    pub bleu_smoothing: bool,
    /// Recall weight of the ROUGE-L F-measure.
    #[serde(default = "one")]
    pub rouge_beta: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            lowercase: false,
            bleu_smoothing: false,
            rouge_beta: 1.0,
        }
    }
}

fn tokens(text: &str, cfg: &MetricConfig) -> Vec<String> {
    normalize_tokens(text, cfg.lowercase)
}

fn ngram_counts(toks: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

fn check_pairs(pairs: &[EvalPair]) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::Contract("no candidates to score".into()));
    }
    if let Some(p) = pairs.iter().find(|p| p.references.is_empty()) {
        return Err(Error::Contract(format!("candidate {:?} has no reference", p.candidate)));
    }
    Ok(())
}

/// Corpus BLEU with uniform weights over n-gram orders `1..=max_n`,
/// clipped counts and the brevity penalty against the closest reference
/// length (shorter on ties).
pub fn bleu(pairs: &[EvalPair], max_n: usize, cfg: &MetricConfig) -> Result<f64> {
    check_pairs(pairs)?;
    if max_n == 0 {
        return Err(Error::Config("BLEU order must be at least 1".into()));
    }
    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);
    for p in pairs {
        let c = tokens(&p.candidate, cfg);
        let refs: Vec<Vec<String>> = p.references.iter().map(|r| tokens(r, cfg)).collect();
        cand_len += c.len();
        ref_len += refs
            .iter()
            .map(|r| r.len())
            .min_by_key(|&l| (l.abs_diff(c.len()), l))
            .unwrap_or(0);
        for n in 1..=max_n {
            let cc = ngram_counts(&c, n);
            let mut max_ref: HashMap<&[String], usize> = HashMap::new();
            for r in &refs {
                for (g, k) in ngram_counts(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(k);
                }
            }
            for (g, k) in cc {
                matched[n - 1] += k.min(max_ref.get(g).copied().unwrap_or(0));
                total[n - 1] += k;
            }
        }
    }
    if cand_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 0..max_n {
        let (m, t) = if cfg.bleu_smoothing && n > 0 {
            (matched[n] as f64 + 1.0, total[n] as f64 + 1.0)
        } else {
            (matched[n] as f64, total[n] as f64)
        };
        if m == 0.0 || t == 0.0 {
            return Ok(0.0);
        }
        log_sum += (m / t).ln();
    }
    let bp = if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    Ok(bp * (log_sum / max_n as f64).exp())
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn rouge_pair(c: &[String], r: &[String], beta: f64) -> f64 {
    let l = lcs_len(c, r);
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / c.len() as f64;
    let rc = l as f64 / r.len() as f64;
    let b2 = beta * beta;
    (1.0 + b2) * p * rc / (rc + b2 * p)
}

/// Mean over pairs of the LCS F-measure, best reference per pair.
pub fn rouge_l(pairs: &[EvalPair], cfg: &MetricConfig) -> Result<f64> {
    check_pairs(pairs)?;
    let sum: f64 = pairs
        .iter()
        .map(|p| {
            let c = tokens(&p.candidate, cfg);
            p.references
                .iter()
                .map(|r| rouge_pair(&c, &tokens(r, cfg), cfg.rouge_beta))
                .fold(0.0, f64::max)
        })
        .sum();
    Ok(sum / pairs.len() as f64)
}

/// Unique n-grams over total n-grams across all candidates.
pub fn distinct_n<S: AsRef<str>>(candidates: &[S], n: usize, cfg: &MetricConfig) -> Result<f64> {
    if n == 0 {
        return Err(Error::Config("distinct-n needs n ≥ 1".into()));
    }
    let mut seen = BTreeSet::new();
    let mut total = 0usize;
    for c in candidates {
        let t = tokens(c.as_ref(), cfg);
        if t.len() >= n {
            for w in t.windows(n) {
                seen.insert(w.to_vec());
                total += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::Contract(format!("no {n}-grams in the candidates")));
    }
    Ok(seen.len() as f64 / total as f64)
}

/// Items × raters categorical labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatingMatrix {
    pub items: Vec<String>,
    pub ratings: Vec<Vec<String>>,
}

impl RatingMatrix {
    pub fn new(ratings: Vec<Vec<String>>) -> Result<Self> {
        let items = (0..ratings.len()).map(|i| i.to_string()).collect();
        let m = Self { items, ratings };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let raters = self.ratings.first().map_or(0, Vec::len);
        if self.ratings.is_empty() || raters < 2 {
            return Err(Error::Schema(
                "a rating matrix needs at least one item and two raters".into(),
            ));
        }
        for (i, row) in self.ratings.iter().enumerate() {
            if row.len() != raters || row.iter().any(|c| c.trim().is_empty()) {
                return Err(Error::Schema(format!(
                    "item {}: expected {raters} filled ratings",
                    self.items[i]
                )));
            }
        }
        Ok(())
    }

    /// CSV with a header row; the first column names the item, the rest
    /// hold one rater's label each.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let mut items = Vec::new();
        let mut ratings = Vec::new();
        for row in rdr.records() {
            let row = row?;
            let mut cells = row.iter().map(|c| c.trim().to_string());
            items.push(cells.next().unwrap_or_default());
            ratings.push(cells.collect());
        }
        let m = Self { items, ratings };
        m.validate()?;
        Ok(m)
    }
}

/// `κ = (P̄ − P̄_e) / (1 − P̄_e)`. When chance agreement is total the value
/// is 1 for perfect observed agreement and undefined otherwise.
pub fn fleiss_kappa(m: &RatingMatrix) -> Result<f64> {
    m.validate()?;
    let n = m.ratings[0].len() as f64;
    let big_n = m.ratings.len() as f64;
    let mut totals: BTreeMap<&str, f64> = BTreeMap::new();
    let mut p_bar = 0.0;
    for row in &m.ratings {
        let mut counts: BTreeMap<&str, f64> = BTreeMap::new();
        for c in row {
            *counts.entry(c.as_str()).or_insert(0.0) += 1.0;
            *totals.entry(c.as_str()).or_insert(0.0) += 1.0;
        }
        let agree: f64 = counts.values().map(|k| k * (k - 1.0)).sum();
        p_bar += agree / (n * (n - 1.0));
    }
    p_bar /= big_n;
    let p_e: f64 = totals.values().map(|t| (t / (big_n * n)).powi(2)).sum();
    if (1.0 - p_e).abs() < 1e-12 {
        return if (p_bar - 1.0).abs() < 1e-12 {
            Ok(1.0)
        } else {
            Err(Error::Undefined("Fleiss' kappa with total chance agreement".into()))
        };
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

/// Per-metric scalars; metrics undefined for the input are omitted.
pub type Scores = BTreeMap<String, f64>;

pub fn score_pairs(pairs: &[EvalPair], cfg: &MetricConfig) -> Result<Scores> {
    let mut s = Scores::new();
    s.insert("bleu1".into(), bleu(pairs, 1, cfg)?);
    s.insert("bleu2".into(), bleu(pairs, 2, cfg)?);
    s.insert("rouge_l".into(), rouge_l(pairs, cfg)?);
    let cands: Vec<&str> = pairs.iter().map(|p| p.candidate.as_str()).collect();
    for n in [2, 3] {
        if let Ok(d) = distinct_n(&cands, n, cfg) {
            s.insert(format!("distinct{n}"), d);
        }
    }
    Ok(s)
}

/// Pairs system outputs with gold texts by id.
pub fn align(system: &BTreeMap<String, String>, gold: &BTreeMap<String, String>) -> Result<Vec<EvalPair>> {
    let missing: Vec<&String> = gold.keys().filter(|k| !system.contains_key(*k)).collect();
    let extra: Vec<&String> = system.keys().filter(|k| !gold.contains_key(*k)).collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::Schema(format!(
            "system and gold ids differ: missing from system {missing:?}, unknown to gold {extra:?}"
        )));
    }
    Ok(gold
        .iter()
        .map(|(id, g)| EvalPair {
            candidate: system[id].clone(),
            references: vec![g.clone()],
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedScores {
    pub seed: u64,
    pub scores: Scores,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub sd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub config: MetricConfig,
    pub examples: usize,
    pub runs: Vec<SeedScores>,
    pub summary: BTreeMap<String, MeanSd>,
}

pub fn mean_sd(values: &[f64]) -> MeanSd {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    MeanSd { mean, sd }
}

/// Scores every run against the gold texts and summarizes each metric
/// defined for all runs. Extra per-run scalars (e.g. perplexity) are merged
/// in from `extra`.
pub fn evaluate_corpus(
    runs: &[(u64, BTreeMap<String, String>)],
    gold: &BTreeMap<String, String>,
    extra: &[(u64, Scores)],
    cfg: &MetricConfig,
) -> Result<MetricReport> {
    if runs.is_empty() {
        return Err(Error::Contract("no system runs to evaluate".into()));
    }
    let mut out = Vec::with_capacity(runs.len());
    for (seed, sys) in runs {
        let mut scores = score_pairs(&align(sys, gold)?, cfg)?;
        for (s, e) in extra {
            if s == seed {
                scores.extend(e.iter().map(|(k, v)| (k.clone(), *v)));
            }
        }
        out.push(SeedScores { seed: *seed, scores });
    }
    let keys: BTreeSet<&String> = out[0]
        .scores
        .keys()
        .filter(|k| out.iter().all(|r| r.scores.contains_key(*k)))
        .collect();
    let summary = keys
        .into_iter()
        .map(|k| {
            let v: Vec<f64> = out.iter().map(|r| r.scores[k]).collect();
            (k.clone(), mean_sd(&v))
        })
        .collect();
    Ok(MetricReport {
        config: cfg.clone(),
        examples: gold.len(),
        runs: out,
        summary,
    })
}
