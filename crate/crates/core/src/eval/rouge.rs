//! ROUGE-N and ROUGE-L over lowercase alphanumeric tokens, no stemming.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    pub fn from_pr(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        RougeScore {
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RougeKind {
    Rouge1,
    Rouge2,
    #[default]
    RougeL,
}

impl std::str::FromStr for RougeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rouge1" | "rouge-1" | "rouge_1" => Ok(RougeKind::Rouge1),
            "rouge2" | "rouge-2" | "rouge_2" => Ok(RougeKind::Rouge2),
            "rougel" | "rouge-l" | "rouge_l" => Ok(RougeKind::RougeL),
            _ => Err(Error::InvalidInput(format!(
                "unknown ROUGE variant `{s}`; expected rouge1, rouge2 or rougeL"
            ))),
        }
    }
}

pub fn rouge(kind: RougeKind, candidate: &str, reference: &str) -> Result<RougeScore> {
    match kind {
        RougeKind::Rouge1 => rouge_n(candidate, reference, 1),
        RougeKind::Rouge2 => rouge_n(candidate, reference, 2),
        RougeKind::RougeL => rouge_l(candidate, reference),
    }
}

fn tokens_checked(candidate: &str, reference: &str) -> Result<(Vec<String>, Vec<String>)> {
    let c = tokenize(candidate);
    let r = tokenize(reference);
    if r.is_empty() {
        return Err(Error::InvalidInput("ROUGE reference has no tokens".into()));
    }
    if c.is_empty() {
        return Err(Error::InvalidInput("ROUGE candidate has no tokens".into()));
    }
    Ok((c, r))
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    for w in tokens.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

/// Clipped n-gram overlap. A text shorter than `n` tokens has no n-grams
/// and scores 0 on the side where it appears.
pub fn rouge_n(candidate: &str, reference: &str, n: usize) -> Result<RougeScore> {
    if n == 0 {
        return Err(Error::InvalidInput("ROUGE-N needs n >= 1".into()));
    }
    let (c, r) = tokens_checked(candidate, reference)?;
    let cc = ngram_counts(&c, n);
    let rc = ngram_counts(&r, n);
    let overlap: usize = cc
        .iter()
        .map(|(g, &k)| k.min(rc.get(g).copied().unwrap_or(0)))
        .sum();
    let c_total = c.len().saturating_sub(n - 1);
    let r_total = r.len().saturating_sub(n - 1);
    let ratio = |total: usize| {
        if total == 0 {
            0.0
        } else {
            overlap as f64 / total as f64
        }
    };
    Ok(RougeScore::from_pr(ratio(c_total), ratio(r_total)))
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l(candidate: &str, reference: &str) -> Result<RougeScore> {
    let (c, r) = tokens_checked(candidate, reference)?;
    let l = lcs_len(&c, &r) as f64;
    Ok(RougeScore::from_pr(l / c.len() as f64, l / r.len() as f64))
}

/// Mean precision, recall and F1 over aligned system/reference lists.
pub fn corpus_rouge(
    kind: RougeKind,
    system: &[String],
    references: &[String],
) -> Result<RougeScore> {
    if system.len() != references.len() {
        return Err(Error::InvalidInput(format!(
            "{} system outputs but {} references",
            system.len(),
            references.len()
        )));
    }
    if system.is_empty() {
        return Err(Error::InvalidInput(
            "corpus ROUGE over zero examples".into(),
        ));
    }
    let scores: Vec<RougeScore> = system
        .iter()
        .zip(references)
        .map(|(s, r)| rouge(kind, s, r))
        .collect::<Result<_>>()?;
    let n = scores.len() as f64;
    Ok(RougeScore {
        precision: scores.iter().map(|s| s.precision).sum::<f64>() / n,
        recall: scores.iter().map(|s| s.recall).sum::<f64>() / n,
        f1: scores.iter().map(|s| s.f1).sum::<f64>() / n,
    })
}
