//! Empathic similarity scoring with a bi-encoder.
//!
//! A text is mapped to a vector by an [`Encoder`]; the empathic similarity of
//! two texts is the cosine of their embeddings. A compromise is scored
//! against both rendered viewpoints of a pair, giving an
//! [`EmpathyScorePair`].

mod checkpoint;
mod hash;
mod projection;
mod remote;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, Provenance};
pub use hash::HashEncoder;
pub use projection::ProjectionEncoder;
pub use remote::{RemoteEncoder, DEFAULT_REMOTE_DIM, DEFAULT_REMOTE_MODEL};
pub use train::{
    spearman, train_scorer, EpochMetrics, ScorerTrainConfig, TrainMetrics, ValidationMetric,
};

use serde::{Deserialize, Serialize};

use crate::corpus::{render_view_text, ViewPair};
use crate::error::{Error, Result};

/// Maps text to a fixed-width vector.
pub trait Encoder: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn encode(&self, text: &str) -> Result<Vec<f64>>;
}

impl Encoder for Box<dyn Encoder> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn encode(&self, text: &str) -> Result<Vec<f64>> {
        (**self).encode(text)
    }
}

/// Anything that can produce an empathic similarity for two texts.
pub trait EmpathyScorer: Send + Sync {
    fn similarity(&self, text_1: &str, text_2: &str) -> Result<f64>;
}

/// Encoder plus the inference-time settings around it.
#[derive(Debug, Clone)]
pub struct EmbeddingModel<E = Box<dyn Encoder>> {
    pub encoder: E,
    pub normalized: bool,
    /// Inputs longer than this many whitespace-separated words are truncated.
    pub max_words: usize,
}

pub const DEFAULT_MAX_WORDS: usize = 512;

impl<E: Encoder> EmbeddingModel<E> {
    pub fn new(encoder: E) -> Self {
        EmbeddingModel {
            encoder,
            normalized: true,
            max_words: DEFAULT_MAX_WORDS,
        }
    }

    pub fn dim(&self) -> usize {
        self.encoder.dim()
    }

    pub fn embed(&self, text: &str) -> Result<Vec<f64>> {
        if text.trim().is_empty() {
            return Err(Error::InvalidInput("cannot embed empty text".into()));
        }
        let words: Vec<&str> = text.split_whitespace().collect();
        let mut v = if words.len() > self.max_words {
            log::warn!(
                "input of {} words truncated to encoder window of {}",
                words.len(),
                self.max_words
            );
            self.encoder.encode(&words[..self.max_words].join(" "))?
        } else {
            self.encoder.encode(text)?
        };
        if v.len() != self.dim() {
            return Err(Error::InvalidInput(format!(
                "encoder `{}` returned {} dims, declared {}",
                self.encoder.name(),
                v.len(),
                self.dim()
            )));
        }
        if self.normalized {
            normalize(&mut v);
        }
        Ok(v)
    }

    pub fn empathic_similarity(&self, text_1: &str, text_2: &str) -> Result<f64> {
        let a = self.embed(text_1)?;
        let b = self.embed(text_2)?;
        Ok(cosine(&a, &b))
    }
}

impl<E: Encoder> EmpathyScorer for EmbeddingModel<E> {
    fn similarity(&self, text_1: &str, text_2: &str) -> Result<f64> {
        self.empathic_similarity(text_1, text_2)
    }
}

/// Empathic similarity of a compromise to each side of a view pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpathyScorePair {
    pub score_a: f64,
    pub score_b: f64,
}

impl EmpathyScorePair {
    pub fn new(score_a: f64, score_b: f64) -> Self {
        EmpathyScorePair { score_a, score_b }
    }

    pub fn gap(&self) -> f64 {
        (self.score_a - self.score_b).abs()
    }
}

pub fn score_compromise(
    scorer: &dyn EmpathyScorer,
    compromise: &str,
    pair: &ViewPair,
) -> Result<EmpathyScorePair> {
    if compromise.trim().is_empty() {
        return Err(Error::InvalidInput("compromise text is empty".into()));
    }
    Ok(EmpathyScorePair {
        score_a: scorer.similarity(compromise, &render_view_text(&pair.view_a))?,
        score_b: scorer.similarity(compromise, &render_view_text(&pair.view_b))?,
    })
}

pub fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Cosine similarity clamped to `[-1, 1]`; zero vectors give 0.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Polarity, Topic, Viewpoint};
    use proptest::prelude::*;

    fn model() -> EmbeddingModel<HashEncoder> {
        EmbeddingModel::new(HashEncoder::new(4096))
    }

    #[test]
    fn embeddings_are_unit_norm_and_deterministic() {
        let m = model();
        let v = m.embed("The park needs more lights at night").unwrap();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
        assert_eq!(v, m.embed("The park needs more lights at night").unwrap());
    }

    #[test]
    fn unrelated_texts_are_not_identical() {
        let m = model();
        assert!(
            m.empathic_similarity("dogs off leash", "quiet library benches")
                .unwrap()
                < 1.0
        );
    }

    #[test]
    fn empty_text_rejected() {
        assert!(model().embed("  ").is_err());
    }

    #[test]
    fn overlong_input_truncated() {
        let mut m = model();
        m.max_words = 3;
        assert_eq!(
            m.embed("one two three four five").unwrap(),
            m.embed("one two three").unwrap()
        );
    }

    #[test]
    fn orthogonal_vectors_have_zero_similarity() {
        assert_eq!(cosine(&[1.0, 0.0, 0.0], &[0.0, 3.0, 0.0]), 0.0);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
    }

    fn pair() -> ViewPair {
        let v = |d: &str, r: &str, s: &str, p| Viewpoint {
            place_description: d.into(),
            reason: r.into(),
            suggestions: s.into(),
            polarity: p,
            topic: Topic::Safe,
            demographics: None,
        };
        ViewPair::new(
            "p",
            v(
                "A park",
                "people are around",
                "keep it open",
                Polarity::Positive,
            ),
            v(
                "The park",
                "dogs run loose",
                "enforce leash laws",
                Polarity::Negative,
            ),
        )
        .unwrap()
    }

    #[test]
    fn compromise_equal_to_view_a_scores_one() {
        let p = pair();
        let s = score_compromise(&model(), &render_view_text(&p.view_a), &p).unwrap();
        assert!((s.score_a - 1.0).abs() < 1e-6);
        assert!(s.score_b < 1.0);
    }

    #[test]
    fn swapping_views_swaps_scores() {
        let p = pair();
        let c = "open areas with leash laws enforced";
        let s = score_compromise(&model(), c, &p).unwrap();
        let t = score_compromise(&model(), c, &p.swapped()).unwrap();
        assert_eq!((s.score_a, s.score_b), (t.score_b, t.score_a));
    }

    proptest! {
        #[test]
        fn similarity_symmetric_and_bounded(a in "[a-z]{1,6}( [a-z]{1,6}){0,8}", b in "[a-z]{1,6}( [a-z]{1,6}){0,8}") {
            let m = model();
            let ab = m.empathic_similarity(&a, &b).unwrap();
            let ba = m.empathic_similarity(&b, &a).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!((-1.0..=1.0).contains(&ab));
            prop_assert!((m.empathic_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-6);
        }
    }
}
