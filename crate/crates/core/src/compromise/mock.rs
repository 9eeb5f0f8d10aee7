//! Deterministic, template-driven stand-in for a chat model.
//!
//! The mock recognizes each prompt kind by its fixed step markers, pulls the
//! viewpoint or decomposition text back out of the prompt, and assembles
//! responses from the suggestion words it finds there. Its behaviour mirrors
//! the qualitative pattern of the real pipeline: the single prompt leans on
//! the negative view, chain-of-thought mixes both views unevenly, and
//! refinement appends words from whichever view scored lower.

use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backend::{LlmBackend, SamplingConfig};
use crate::error::{Error, Result};
use crate::text::{fnv1a, tokenize};

use super::parse::parse_decomposition;
use super::prompts::{
    LABEL_NEGATIVE, LABEL_POSITIVE, LABEL_VIEW_A, LABEL_VIEW_B, REFINE_MARKER, STEP_1, STEP_5,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptKind {
    SinglePrompt,
    Decompose,
    CotGenerate,
    SelfEvaluate,
    SelfImprove,
    Refine,
}

const KINDS: [PromptKind; 6] = [
    PromptKind::SinglePrompt,
    PromptKind::Decompose,
    PromptKind::CotGenerate,
    PromptKind::SelfEvaluate,
    PromptKind::SelfImprove,
    PromptKind::Refine,
];

impl PromptKind {
    pub fn classify(prompt: &str) -> Option<PromptKind> {
        if prompt.contains(REFINE_MARKER) {
            Some(PromptKind::Refine)
        } else if prompt.contains("Step 6: Create") {
            Some(PromptKind::SelfImprove)
        } else if prompt.contains(STEP_5) {
            Some(PromptKind::SelfEvaluate)
        } else if prompt.contains("Step 4: Create") {
            Some(PromptKind::CotGenerate)
        } else if prompt.contains(STEP_1) {
            Some(PromptKind::Decompose)
        } else if prompt.contains("responses with a fixed format") {
            Some(PromptKind::SinglePrompt)
        } else {
            None
        }
    }

    fn index(self) -> usize {
        KINDS.iter().position(|k| *k == self).expect("listed")
    }
}

const STOPWORDS: &[&str] = &[
    "that",
    "this",
    "with",
    "from",
    "have",
    "there",
    "their",
    "they",
    "would",
    "could",
    "should",
    "about",
    "been",
    "were",
    "what",
    "when",
    "where",
    "which",
    "while",
    "more",
    "some",
    "ways",
    "place",
    "modified",
    "here",
    "very",
    "also",
    "into",
    "like",
    "just",
    "than",
    "then",
    "them",
    "because",
    "feel",
    "will",
    "make",
    "made",
    "being",
    "other",
    "others",
    "those",
    "these",
    "safer",
    "welcoming",
    "excluding",
    "writing",
    "really",
    "much",
    "many",
    "over",
    "only",
];

/// Distinct content words in order of first appearance.
fn content_words(text: &str) -> Vec<String> {
    let mut seen = HashSet::new();
    tokenize(text)
        .into_iter()
        .filter(|t| {
            t.len() >= 4
                && !STOPWORDS.contains(&t.as_str())
                && !t.chars().all(|c| c.is_ascii_digit())
        })
        .filter(|t| seen.insert(t.clone()))
        .collect()
}

/// The suggestion part of a rendered viewpoint.
fn suggestion_part(view: &str) -> &str {
    view.rfind(" are: ").map(|i| &view[i + 6..]).unwrap_or(view)
}

fn field<'a>(prompt: &'a str, label: &str) -> Option<&'a str> {
    prompt
        .lines()
        .find_map(|l| l.strip_prefix(label))
        .map(str::trim)
}

fn requested_n(prompt: &str) -> usize {
    prompt
        .lines()
        .filter(|l| l.contains("[Insert response"))
        .count()
        .max(1)
}

/// `(text, score_a, score_b)` triples from `Response k:` / `Score k:` lines.
fn scored_items(prompt: &str) -> Vec<(String, f64, f64)> {
    let mut items = Vec::new();
    let mut pending: Option<String> = None;
    for line in prompt.lines() {
        if line.contains("[Insert response") {
            continue;
        }
        if let Some(rest) = line.strip_prefix("Response ") {
            if let Some((_, text)) = rest.split_once(": ") {
                pending = Some(text.to_string());
            }
        } else if let Some(rest) = line.strip_prefix("Score ") {
            if let (Some(text), Some((_, nums))) = (pending.take(), rest.split_once(": ")) {
                let v: Vec<f64> = nums
                    .split(',')
                    .filter_map(|x| x.trim().parse().ok())
                    .collect();
                if v.len() == 2 {
                    items.push((text, v[0], v[1]));
                }
            }
        }
    }
    items
}

fn unscored_items(prompt: &str) -> Vec<String> {
    prompt
        .lines()
        .filter(|l| !l.contains("[Insert response"))
        .filter_map(|l| l.strip_prefix("Response "))
        .filter_map(|r| r.split_once(": ").map(|(_, t)| t.to_string()))
        .collect()
}

fn join_words(words: &[&String]) -> String {
    match words {
        [] => String::new(),
        [one] => one.to_string(),
        [init @ .., last] => format!(
            "{} and {}",
            init.iter()
                .map(|w| w.as_str())
                .collect::<Vec<_>>()
                .join(", "),
            last
        ),
    }
}

fn format_responses(texts: &[String]) -> String {
    texts
        .iter()
        .enumerate()
        .map(|(k, t)| format!("Response {}: {}\n", k + 1, t))
        .collect()
}

/// Appends the first word of `pool` not already in `text`.
fn append_missing(text: &str, pool: &[String], rng: &mut ChaCha8Rng) -> String {
    let present: HashSet<String> = tokenize(text).into_iter().collect();
    let missing: Vec<&String> = pool.iter().filter(|w| !present.contains(*w)).collect();
    match missing.choose(rng) {
        Some(w) => format!("{} Also consider {}.", text.trim_end(), w),
        None => text.to_string(),
    }
}

#[derive(Debug, Default)]
pub struct MockBackend {
    counts: [AtomicUsize; 6],
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn requests(&self, kind: PromptKind) -> usize {
        self.counts[kind.index()].load(Ordering::SeqCst)
    }

    pub fn total_requests(&self) -> usize {
        self.counts.iter().map(|c| c.load(Ordering::SeqCst)).sum()
    }

    fn malformed(&self, what: &str) -> Error {
        Error::Backend {
            backend: "mock".into(),
            message: format!("prompt is missing {what}"),
        }
    }

    fn decomposition_words(&self, prompt: &str) -> Result<(Vec<String>, Vec<String>)> {
        let (a, b, _) = parse_decomposition(prompt).map_err(|_| self.malformed("decomposition"))?;
        Ok((content_words(&a), content_words(&b)))
    }
}

impl LlmBackend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, prompt: &str, sampling: &SamplingConfig) -> Result<String> {
        sampling.validate()?;
        let kind =
            PromptKind::classify(prompt).ok_or_else(|| self.malformed("a known step marker"))?;
        self.counts[kind.index()].fetch_add(1, Ordering::SeqCst);
        let mut rng =
            ChaCha8Rng::seed_from_u64(fnv1a(prompt.as_bytes()) ^ sampling.seed.rotate_left(17));
        let n = requested_n(prompt);

        let out = match kind {
            PromptKind::SinglePrompt => {
                let pos =
                    field(prompt, LABEL_POSITIVE).ok_or_else(|| self.malformed("positive view"))?;
                let neg =
                    field(prompt, LABEL_NEGATIVE).ok_or_else(|| self.malformed("negative view"))?;
                let a = content_words(suggestion_part(pos));
                let b = content_words(suggestion_part(neg));
                let texts: Vec<String> = (0..n)
                    .map(|_| {
                        let mut words: Vec<&String> = b.choose_multiple(&mut rng, 3).collect();
                        if rng.random_bool(0.2) {
                            words.extend(a.choose(&mut rng));
                        }
                        format!(
                            "The place could address {} for visitors.",
                            join_words(&words)
                        )
                    })
                    .collect();
                format!(
                    "{LABEL_POSITIVE} (summarized)\n{LABEL_NEGATIVE} (summarized)\n{}",
                    format_responses(&texts)
                )
            }
            PromptKind::Decompose => {
                let va = field(prompt, LABEL_VIEW_A).ok_or_else(|| self.malformed("view_A"))?;
                let vb = field(prompt, LABEL_VIEW_B).ok_or_else(|| self.malformed("view_B"))?;
                let a = content_words(suggestion_part(va));
                let b = content_words(suggestion_part(vb));
                let all_b: HashSet<String> = content_words(vb).into_iter().collect();
                let shared: Vec<String> = content_words(va)
                    .into_iter()
                    .filter(|w| all_b.contains(w))
                    .collect();
                let list = |ws: &[String]| {
                    if ws.is_empty() {
                        "none stated".to_string()
                    } else {
                        ws.join(", ")
                    }
                };
                format!(
                    "Suggestions A: {}\nSuggestions B: {}\nSimilarities: {}\n",
                    list(&a),
                    list(&b),
                    if shared.is_empty() {
                        "both want the place to be better for its visitors".to_string()
                    } else {
                        shared.join(", ")
                    }
                )
            }
            PromptKind::CotGenerate => {
                let (a, b) = self.decomposition_words(prompt)?;
                let texts: Vec<String> = (0..n)
                    .map(|_| {
                        let na = rng.random_range(1..=2);
                        let nb = rng.random_range(2..=3);
                        let wa: Vec<&String> = a.choose_multiple(&mut rng, na).collect();
                        let wb: Vec<&String> = b.choose_multiple(&mut rng, nb).collect();
                        format!(
                            "Combine {} with {} so that everyone benefits.",
                            join_words(&wa),
                            join_words(&wb)
                        )
                    })
                    .collect();
                format_responses(&texts)
            }
            PromptKind::SelfEvaluate => {
                let items = unscored_items(prompt);
                items
                    .iter()
                    .enumerate()
                    .map(|(k, _)| {
                        format!(
                            "Score {}: {:.2}, {:.2}\n",
                            k + 1,
                            rng.random_range(0.0..1.0),
                            rng.random_range(0.0..1.0)
                        )
                    })
                    .collect()
            }
            PromptKind::SelfImprove | PromptKind::Refine => {
                let (a, b) = self.decomposition_words(prompt)?;
                let items = scored_items(prompt);
                if items.is_empty() {
                    return Err(self.malformed("scored compromises"));
                }
                // The first slot carries the best compromise over unchanged, so a
                // round never loses the best gap it was shown.
                let texts: Vec<String> = (0..n)
                    .map(|k| {
                        let (text, sa, sb) = &items[k % items.len()];
                        if k == 0 {
                            return text.clone();
                        }
                        let pool = if sa < sb { &a } else { &b };
                        append_missing(text, pool, &mut rng)
                    })
                    .collect();
                format_responses(&texts)
            }
        };
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compromise::parse::parse_llm_response;
    use crate::compromise::prompts;

    #[test]
    fn content_words_skip_short_and_stopwords() {
        assert_eq!(
            content_words("I would like stricter leash laws. Fines for rule breakers, leash!"),
            vec!["stricter", "leash", "laws", "fines", "rule", "breakers"]
        );
    }

    #[test]
    fn single_prompt_output_parses_and_is_deterministic() {
        let m = MockBackend::new();
        let p = prompts::single_prompt(
            "I am writing about this place: park. Some ways this place could be modified to be safer are: open lawns, picnic tables",
            "I am writing about this place: park. Some ways this place could be modified to be safer are: stricter leash laws, fines",
            4,
        );
        let s = SamplingConfig::default();
        let out = m.complete(&p, &s).unwrap();
        assert_eq!(out, m.complete(&p, &s).unwrap());
        assert_eq!(parse_llm_response(&out, 4).unwrap().len(), 4);
        assert_eq!(m.requests(PromptKind::SinglePrompt), 2);
    }

    #[test]
    fn unknown_prompt_is_an_error() {
        assert!(MockBackend::new()
            .complete("hello", &SamplingConfig::default())
            .is_err());
    }
}
