//! Compromise generation with four prompting strategies.
//!
//! * single prompt: one request asking directly for N compromises;
//! * chain of thought (CoT): a cached decomposition of the two views
//!   (suggestions of each side and their similarities), then a request for
//!   N neutral compromises built on the similarities;
//! * CoT + LLM: CoT followed by one round in which the model scores its own
//!   compromises and is asked for better ones;
//! * CoT + feedback: CoT followed by refinement rounds driven by scores from
//!   an external empathic similarity model.

mod mock;
mod parse;
pub mod prompts;

pub use mock::{MockBackend, PromptKind};
pub use parse::{parse_decomposition, parse_llm_response, parse_self_scores};

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use once_cell::sync::OnceCell;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{LlmBackend, SamplingConfig};
use crate::corpus::{render_view_text_with, ViewPair};
use crate::error::{Error, Result};
use crate::scorer::{score_compromise, EmpathyScorePair, EmpathyScorer};
use crate::selection::rank_by_neutrality;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    SinglePrompt,
    Cot,
    CotLlm,
    CotFeedback,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::SinglePrompt,
        Strategy::Cot,
        Strategy::CotLlm,
        Strategy::CotFeedback,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::SinglePrompt => "single_prompt",
            Strategy::Cot => "cot",
            Strategy::CotLlm => "cot_llm",
            Strategy::CotFeedback => "cot_feedback",
        }
    }

    /// Column label used in reports.
    pub fn short_label(self) -> &'static str {
        match self {
            Strategy::SinglePrompt => "SP",
            Strategy::Cot => "CoT",
            Strategy::CotLlm => "CoT+LLM",
            Strategy::CotFeedback => "CoT+FB",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sp" | "single_prompt" => Ok(Strategy::SinglePrompt),
            "cot" => Ok(Strategy::Cot),
            "cot-llm" | "cot_llm" => Ok(Strategy::CotLlm),
            "cot-fb" | "cot_fb" | "cot_feedback" => Ok(Strategy::CotFeedback),
            other => Err(Error::InvalidInput(format!(
                "unknown strategy `{other}`; expected one of single_prompt (sp), cot, cot_llm (cot-llm), cot_feedback (cot-fb)"
            ))),
        }
    }
}

/// The three sections extracted once per pair and reused by every CoT
/// variant and every refinement round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decomposition {
    pub pair_id: String,
    pub suggestions_a: String,
    pub suggestions_b: String,
    pub similarities: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Compromise {
    pub pair_id: String,
    pub strategy: Strategy,
    pub iteration: u32,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<EmpathyScorePair>,
}

impl Compromise {
    pub fn gap(&self) -> Option<f64> {
        self.scores.map(|s| s.gap())
    }
}

/// Get-or-compute store for decompositions, safe under concurrent access:
/// each pair id is computed at most once even when requested concurrently.
#[derive(Default)]
pub struct DecompositionCache {
    cells: Mutex<HashMap<String, Arc<OnceCell<Decomposition>>>>,
}

impl DecompositionCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_try_insert(
        &self,
        pair_id: &str,
        compute: impl FnOnce() -> Result<Decomposition>,
    ) -> Result<Decomposition> {
        let cell = {
            let mut map = self.cells.lock().expect("decomposition cache poisoned");
            map.entry(pair_id.to_string()).or_default().clone()
        };
        cell.get_or_try_init(compute).cloned()
    }

    pub fn len(&self) -> usize {
        let map = self.cells.lock().expect("decomposition cache poisoned");
        map.values().filter(|c| c.get().is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackConfig {
    /// Total rounds including the initial CoT round; 1 means no refinement.
    pub max_iters: u32,
    /// Stop once a round improves the best gap by less than this.
    pub stop_epsilon: f64,
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        FeedbackConfig {
            max_iters: 3,
            stop_epsilon: 0.01,
        }
    }
}

pub const DEFAULT_N: usize = 4;

pub struct CompromiseEngine<'a> {
    backend: &'a dyn LlmBackend,
    sampling: SamplingConfig,
    cache: DecompositionCache,
    include_demographics: bool,
}

impl<'a> CompromiseEngine<'a> {
    pub fn new(backend: &'a dyn LlmBackend, sampling: SamplingConfig) -> Self {
        CompromiseEngine {
            backend,
            sampling,
            cache: DecompositionCache::new(),
            include_demographics: false,
        }
    }

    pub fn with_demographics(mut self, include: bool) -> Self {
        self.include_demographics = include;
        self
    }

    pub fn cache(&self) -> &DecompositionCache {
        &self.cache
    }

    fn views(&self, pair: &ViewPair) -> (String, String) {
        (
            render_view_text_with(&pair.view_a, self.include_demographics),
            render_view_text_with(&pair.view_b, self.include_demographics),
        )
    }

    fn ask(&self, prompt: &str) -> Result<String> {
        self.sampling.validate()?;
        self.backend.complete(prompt, &self.sampling)
    }

    fn tag(
        pair: &ViewPair,
        strategy: Strategy,
        iteration: u32,
        texts: Vec<String>,
    ) -> Vec<Compromise> {
        texts
            .into_iter()
            .map(|text| Compromise {
                pair_id: pair.pair_id.clone(),
                strategy,
                iteration,
                text,
                scores: None,
            })
            .collect()
    }

    fn check_n(n: usize) -> Result<()> {
        if n == 0 {
            return Err(Error::InvalidInput("n must be at least 1".into()));
        }
        Ok(())
    }

    pub fn generate_single_prompt(&self, pair: &ViewPair, n: usize) -> Result<Vec<Compromise>> {
        Self::check_n(n)?;
        let (a, b) = self.views(pair);
        let raw = self.ask(&prompts::single_prompt(&a, &b, n))?;
        Ok(Self::tag(
            pair,
            Strategy::SinglePrompt,
            0,
            parse_llm_response(&raw, n)?,
        ))
    }

    pub fn decompose_views(&self, pair: &ViewPair) -> Result<Decomposition> {
        self.cache.get_or_try_insert(&pair.pair_id, || {
            let (a, b) = self.views(pair);
            let raw = self.ask(&prompts::decompose(&a, &b))?;
            let (suggestions_a, suggestions_b, similarities) = parse_decomposition(&raw)?;
            Ok(Decomposition {
                pair_id: pair.pair_id.clone(),
                suggestions_a,
                suggestions_b,
                similarities,
            })
        })
    }

    fn cot_texts(&self, pair: &ViewPair, d: &Decomposition, n: usize) -> Result<Vec<String>> {
        let (a, b) = self.views(pair);
        let raw = self.ask(&prompts::cot_generate(&a, &b, d, n))?;
        parse_llm_response(&raw, n)
    }

    pub fn generate_cot(&self, pair: &ViewPair, n: usize) -> Result<Vec<Compromise>> {
        Self::check_n(n)?;
        let d = self.decompose_views(pair)?;
        Ok(Self::tag(
            pair,
            Strategy::Cot,
            0,
            self.cot_texts(pair, &d, n)?,
        ))
    }

    /// CoT, then one self-evaluation round. The self-scores steer the
    /// model's rewrite only; they are never attached to the output.
    pub fn generate_cot_llm(&self, pair: &ViewPair, n: usize) -> Result<Vec<Compromise>> {
        Self::check_n(n)?;
        let d = self.decompose_views(pair)?;
        let initial = self.cot_texts(pair, &d, n)?;
        let (a, b) = self.views(pair);
        let raw = self.ask(&prompts::self_evaluate(&a, &b, &d, &initial))?;
        let self_scores = parse_self_scores(&raw, initial.len())?;
        let scored: Vec<(String, f64, f64)> = initial
            .into_iter()
            .zip(self_scores)
            .map(|(t, (sa, sb))| (t, sa, sb))
            .collect();
        let raw = self.ask(&prompts::self_improve(&a, &b, &d, &scored, n))?;
        Ok(Self::tag(
            pair,
            Strategy::CotLlm,
            1,
            parse_llm_response(&raw, n)?,
        ))
    }

    fn score_all(
        scorer: &dyn EmpathyScorer,
        pair: &ViewPair,
        items: &mut [Compromise],
    ) -> Result<()> {
        for c in items.iter_mut() {
            c.scores = Some(score_compromise(scorer, &c.text, pair)?);
        }
        Ok(())
    }

    /// CoT followed by similarity-guided refinement. Returns every
    /// compromise of every round, scored, in round order.
    pub fn generate_cot_feedback(
        &self,
        pair: &ViewPair,
        n: usize,
        scorer: &dyn EmpathyScorer,
        cfg: FeedbackConfig,
    ) -> Result<Vec<Compromise>> {
        Self::check_n(n)?;
        if cfg.max_iters == 0 {
            return Err(Error::InvalidInput("max_iters must be at least 1".into()));
        }
        let d = self.decompose_views(pair)?;
        let mut all = Self::tag(pair, Strategy::CotFeedback, 0, self.cot_texts(pair, &d, n)?);
        Self::score_all(scorer, pair, &mut all)?;
        let mut best = best_gap(&all);

        for iteration in 1..cfg.max_iters {
            let current: Vec<(String, f64, f64)> = rank_by_neutrality(&all)?
                .into_iter()
                .take(n)
                .map(|i| {
                    let s = all[i].scores.expect("scored above");
                    (all[i].text.clone(), s.score_a, s.score_b)
                })
                .collect();
            let raw = self.ask(&prompts::refine(&d, &current, n))?;
            let mut round = Self::tag(
                pair,
                Strategy::CotFeedback,
                iteration,
                parse_llm_response(&raw, n)?,
            );
            Self::score_all(scorer, pair, &mut round)?;
            let round_best = best_gap(&round);
            all.extend(round);
            let improvement = best - round_best.min(best);
            best = best.min(round_best);
            log::debug!(
                "pair {} round {iteration}: best gap {best:.4} (improved {improvement:.4})",
                pair.pair_id
            );
            if improvement < cfg.stop_epsilon {
                break;
            }
        }
        Ok(all)
    }

    pub fn generate(
        &self,
        strategy: Strategy,
        pair: &ViewPair,
        n: usize,
        scorer: &dyn EmpathyScorer,
        feedback: FeedbackConfig,
    ) -> Result<Vec<Compromise>> {
        match strategy {
            Strategy::SinglePrompt => self.generate_single_prompt(pair, n),
            Strategy::Cot => self.generate_cot(pair, n),
            Strategy::CotLlm => self.generate_cot_llm(pair, n),
            Strategy::CotFeedback => self.generate_cot_feedback(pair, n, scorer, feedback),
        }
    }

    /// Runs every strategy on every pair, with up to `in_flight` pairs in
    /// progress at once. Output is grouped by pair in input order, then by
    /// strategy in the order given.
    pub fn generate_pool(
        &self,
        pairs: &[ViewPair],
        strategies: &[Strategy],
        n: usize,
        scorer: &dyn EmpathyScorer,
        feedback: FeedbackConfig,
        in_flight: usize,
    ) -> Result<Vec<Compromise>> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(in_flight.max(1))
            .build()
            .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
        let per_pair: Vec<Result<Vec<Compromise>>> = pool.install(|| {
            pairs
                .par_iter()
                .map(|pair| {
                    let mut out = Vec::new();
                    for &s in strategies {
                        out.extend(self.generate(s, pair, n, scorer, feedback)?);
                    }
                    Ok(out)
                })
                .collect()
        });
        let mut all = Vec::new();
        for r in per_pair {
            all.extend(r?);
        }
        Ok(all)
    }
}

fn best_gap(items: &[Compromise]) -> f64 {
    items
        .iter()
        .filter_map(Compromise::gap)
        .fold(f64::INFINITY, f64::min)
}

/// The `n` compromises a feedback run contributes to the candidate pool:
/// the most neutral ones from the refinement rounds, or from the initial
/// round when no refinement happened.
pub fn feedback_contribution(trajectory: &[Compromise], n: usize) -> Result<Vec<Compromise>> {
    let refined: Vec<Compromise> = trajectory
        .iter()
        .filter(|c| c.iteration > 0)
        .cloned()
        .collect();
    let source = if refined.is_empty() {
        trajectory.to_vec()
    } else {
        refined
    };
    Ok(rank_by_neutrality(&source)?
        .into_iter()
        .take(n)
        .map(|i| source[i].clone())
        .collect())
}
