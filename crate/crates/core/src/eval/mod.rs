//! Evaluation: ROUGE, neutrality-gap distributions, best-of-k sampling and
//! the catastrophic-forgetting log-likelihood check.

pub mod rouge;
mod svg;

pub use rouge::{corpus_rouge, lcs_len, rouge, rouge_l, rouge_n, RougeKind, RougeScore};
pub use svg::render_box_plot;

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::align::{GenerationConfig, LanguageModel};
use crate::corpus::ViewPair;
use crate::error::{Error, Result};
use crate::scorer::{score_compromise, EmpathyScorer};
use crate::stats::quantile_sorted;

/// Draws `k` samples and keeps the one scoring highest under `metric`
/// (earliest sample wins ties). With `k == 1` the single sample is returned
/// without consulting the metric.
pub fn best_of_k(
    model: &dyn LanguageModel,
    prompt: &str,
    k: usize,
    gen: &GenerationConfig,
    seed: u64,
    metric: &dyn Fn(&str) -> Result<f64>,
) -> Result<String> {
    if k == 0 {
        return Err(Error::InvalidInput("best-of-k needs k >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = model.generate(prompt, gen, &mut rng)?;
    if k == 1 {
        return Ok(first);
    }
    let mut best_score = metric(&first)?;
    let mut best = first;
    for _ in 1..k {
        let s = model.generate(prompt, gen, &mut rng)?;
        let score = metric(&s)?;
        if score > best_score {
            best_score = score;
            best = s;
        }
    }
    Ok(best)
}

/// Metric for [`best_of_k`]: ROUGE F1 against a reference.
pub fn rouge_metric(kind: RougeKind, reference: &str) -> impl Fn(&str) -> Result<f64> + '_ {
    move |c: &str| Ok(rouge(kind, c, reference)?.f1)
}

/// Metric for [`best_of_k`] when no reference exists: negated neutrality
/// gap, so that the most neutral sample wins.
pub fn neutrality_metric<'a>(
    scorer: &'a dyn EmpathyScorer,
    pair: &'a ViewPair,
) -> impl Fn(&str) -> Result<f64> + 'a {
    move |c: &str| Ok(-score_compromise(scorer, c, pair)?.gap())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput(
                "cannot summarise an empty sample".into(),
            ));
        }
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        Ok(Summary {
            n: s.len(),
            mean: s.iter().sum::<f64>() / s.len() as f64,
            min: s[0],
            q1: quantile_sorted(&s, 0.25),
            median: quantile_sorted(&s, 0.5),
            q3: quantile_sorted(&s, 0.75),
            max: s[s.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemGaps {
    pub gaps: Vec<f64>,
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeutralityReport {
    pub seed: u64,
    /// Pair ids in the sampled order; `gaps[i]` of every system refers to
    /// `pair_ids[i]`.
    pub pair_ids: Vec<String>,
    pub systems: BTreeMap<String, SystemGaps>,
}

/// Scores every system's output on a seeded sample of pairs.
/// `systems[name][i]` is that system's output for `pairs[i]`.
pub fn neutrality_report(
    systems: &BTreeMap<String, Vec<String>>,
    pairs: &[ViewPair],
    scorer: &dyn EmpathyScorer,
    sample_size: usize,
    seed: u64,
) -> Result<NeutralityReport> {
    if pairs.is_empty() || systems.is_empty() {
        return Err(Error::InvalidInput(
            "neutrality report needs pairs and systems".into(),
        ));
    }
    for (name, outs) in systems {
        if outs.len() != pairs.len() {
            return Err(Error::InvalidInput(format!(
                "system `{name}` has {} outputs for {} pairs",
                outs.len(),
                pairs.len()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = sample(&mut rng, pairs.len(), sample_size.min(pairs.len())).into_vec();
    let mut out = BTreeMap::new();
    for (name, outs) in systems {
        let gaps: Vec<f64> = idx
            .iter()
            .map(|&i| Ok(score_compromise(scorer, &outs[i], &pairs[i])?.gap()))
            .collect::<Result<_>>()?;
        let summary = Summary::of(&gaps)?;
        out.insert(name.clone(), SystemGaps { gaps, summary });
    }
    Ok(NeutralityReport {
        seed,
        pair_ids: idx.iter().map(|&i| pairs[i].pair_id.clone()).collect(),
        systems: out,
    })
}

impl NeutralityReport {
    /// One row per (system, pair) with the gap.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("system\tpair_id\tgap\n");
        for (name, g) in &self.systems {
            for (pid, gap) in self.pair_ids.iter().zip(&g.gaps) {
                s.push_str(&format!("{name}\t{pid}\t{gap:.6}\n"));
            }
        }
        s
    }

    pub fn to_svg(&self) -> String {
        let rows: Vec<(&str, Summary)> = self
            .systems
            .iter()
            .map(|(n, g)| (n.as_str(), g.summary))
            .collect();
        render_box_plot("|score_A - score_B| (lower is more neutral)", &rows)
    }
}

/// Mean per-token log-likelihood: each document's token log-probabilities
/// are averaged, then the per-document values are averaged.
pub fn forgetting_loglik(model: &dyn LanguageModel, corpus: &[String]) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::InvalidInput(
            "forgetting check needs a non-empty corpus".into(),
        ));
    }
    // Running means keep a constant sequence exactly constant.
    let mut doc_mean = 0.0;
    for (i, doc) in corpus.iter().enumerate() {
        let lps = model.token_log_probs("", doc)?;
        let mut m = 0.0;
        for (j, lp) in lps.iter().enumerate() {
            m += (lp - m) / (j + 1) as f64;
        }
        doc_mean += (m - doc_mean) / (i + 1) as f64;
    }
    if !doc_mean.is_finite() {
        return Err(Error::NonFinite("forgetting log-likelihood"));
    }
    Ok(doc_mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::UniformLm;
    use crate::corpus::{render_view_text, Polarity, Topic, Viewpoint};
    use crate::scorer::{EmbeddingModel, HashEncoder};
    use rand::RngCore;

    /// Emits a fixed list of outputs in turn.
    struct Scripted(Vec<&'static str>, std::sync::atomic::AtomicUsize);

    impl LanguageModel for Scripted {
        fn name(&self) -> &str {
            "scripted"
        }
        fn token_log_probs(&self, _: &str, _: &str) -> Result<Vec<f64>> {
            unimplemented!()
        }
        fn generate(&self, _: &str, _: &GenerationConfig, _: &mut dyn RngCore) -> Result<String> {
            let i = self.1.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            Ok(self.0[i % self.0.len()].to_string())
        }
    }

    fn scripted() -> Scripted {
        Scripted(
            vec![
                "close the park",
                "add lights near the path",
                "add more lights",
                "fine dog owners",
            ],
            Default::default(),
        )
    }

    #[test]
    fn best_of_k_picks_highest_rouge() {
        let reference = "add more lights near the path";
        let metric = rouge_metric(RougeKind::RougeL, reference);
        let best = best_of_k(
            &scripted(),
            "p",
            4,
            &GenerationConfig::default(),
            0,
            &metric,
        )
        .unwrap();
        // LCS lengths: 0, 5, 3, 0 against a 6-token reference.
        assert_eq!(best, "add lights near the path");
    }

    #[test]
    fn best_of_one_ignores_metric() {
        let metric = |_: &str| -> Result<f64> { Err(Error::InvalidInput("not called".into())) };
        let out = best_of_k(
            &scripted(),
            "p",
            1,
            &GenerationConfig::default(),
            0,
            &metric,
        )
        .unwrap();
        assert_eq!(out, "close the park");
    }

    #[test]
    fn forgetting_uniform_is_exact() {
        let m = UniformLm::with_size(7).unwrap();
        let corpus = vec![
            "a b c".to_string(),
            "d e f g h i j k l".to_string(),
            "x".to_string(),
        ];
        assert_eq!(forgetting_loglik(&m, &corpus).unwrap(), (1.0f64 / 7.0).ln());
        assert!(forgetting_loglik(&m, &[]).is_err());
    }

    fn pair(id: &str, b_sugg: &str) -> ViewPair {
        let v = |s: &str, p| Viewpoint {
            place_description: "A park".into(),
            reason: "it matters".into(),
            suggestions: s.into(),
            polarity: p,
            topic: Topic::Welcome,
            demographics: None,
        };
        ViewPair::new(
            id,
            v("keep the lawn open", Polarity::Positive),
            v(b_sugg, Polarity::Negative),
        )
        .unwrap()
    }

    #[test]
    fn echoing_view_a_has_positive_gap() {
        let scorer = EmbeddingModel::new(HashEncoder::new(4096));
        let pairs = vec![pair("p1", "ban loud music"), pair("p2", "add more guards")];
        let echo: Vec<String> = pairs.iter().map(|p| render_view_text(&p.view_a)).collect();
        let systems = BTreeMap::from([
            ("echo".to_string(), echo.clone()),
            ("echo2".to_string(), echo),
        ]);
        let r = neutrality_report(&systems, &pairs, &scorer, 100, 1).unwrap();
        assert_eq!(r.pair_ids.len(), 2);
        for (gap, pid) in r.systems["echo"].gaps.iter().zip(&r.pair_ids) {
            let p = pairs.iter().find(|p| &p.pair_id == pid).unwrap();
            let sim = scorer
                .empathic_similarity(&render_view_text(&p.view_a), &render_view_text(&p.view_b))
                .unwrap();
            assert!((gap - (1.0 - sim)).abs() < 1e-9);
            assert!(*gap > 0.0);
        }
        assert_eq!(r.systems["echo"], r.systems["echo2"]);
        assert!(r.to_svg().starts_with("<svg"));
        assert_eq!(r.to_tsv().lines().count(), 5);
    }

    #[test]
    fn summary_quartiles() {
        let s = Summary::of(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((s.min, s.median, s.max, s.mean), (1.0, 2.5, 4.0, 2.5));
        assert_eq!((s.q1, s.q3), (1.75, 3.25));
    }
}
