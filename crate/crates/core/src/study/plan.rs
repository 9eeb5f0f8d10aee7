use std::collections::HashMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::compromise::{feedback_contribution, Compromise, Strategy};
use crate::corpus::{render_view_text, ViewPair};
use crate::error::{Error, Result};

use super::{
    MethodLabel, Perspective, PresentedSuggestion, RaterPlan, StudyItem, StudyPlan, ITEMS_PER_RATER,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairAssignment {
    /// Rater `r` gets eligible pairs `(items * r + j) mod P`, so pairs are
    /// covered evenly and reused only once all have been handed out.
    Sequential,
    /// Each rater gets an independent random set of distinct pairs.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanConfig {
    pub items_per_rater: usize,
    pub assignment: PairAssignment,
    /// How many feedback-loop compromises per pair are eligible for the
    /// two feedback slots.
    pub feedback_n: usize,
    /// Cap on distinct pairs used in the study; `None` uses every eligible
    /// pair.
    pub num_pairs: Option<usize>,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig {
            items_per_rater: ITEMS_PER_RATER,
            assignment: PairAssignment::Sequential,
            feedback_n: 4,
            num_pairs: None,
        }
    }
}

/// The four generated compromises shown for a pair, fixed across raters.
struct PairChoice<'a> {
    pair: &'a ViewPair,
    picks: [(MethodLabel, String); 4],
}

fn choose_for_pair<'a>(
    pair: &'a ViewPair,
    items: &[&Compromise],
    feedback_n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Option<PairChoice<'a>>> {
    let of = |s: Strategy| -> Vec<&Compromise> {
        items.iter().copied().filter(|c| c.strategy == s).collect()
    };
    let sp = of(Strategy::SinglePrompt);
    let cot = of(Strategy::Cot);
    let fb_all: Vec<Compromise> = of(Strategy::CotFeedback).into_iter().cloned().collect();
    let fb = if fb_all.is_empty() {
        Vec::new()
    } else {
        feedback_contribution(&fb_all, feedback_n)?
    };
    if sp.is_empty() || cot.is_empty() || fb.len() < 2 {
        return Ok(None);
    }
    let sp = sp.choose(rng).expect("non-empty");
    let cot = cot.choose(rng).expect("non-empty");
    // `fb` is in neutrality order, so the more neutral pick becomes slot 1.
    let mut two: Vec<usize> = rand::seq::index::sample(rng, fb.len(), 2).into_vec();
    two.sort_unstable();
    Ok(Some(PairChoice {
        pair,
        picks: [
            (MethodLabel::SinglePrompt, sp.text.clone()),
            (MethodLabel::Cot, cot.text.clone()),
            (MethodLabel::CotFb1, fb[two[0]].text.clone()),
            (MethodLabel::CotFb2, fb[two[1]].text.clone()),
        ],
    }))
}

fn make_item(choice: &PairChoice<'_>, perspective: Perspective, rng: &mut ChaCha8Rng) -> StudyItem {
    let (own, other) = match perspective {
        Perspective::AsA => (&choice.pair.view_a, &choice.pair.view_b),
        Perspective::AsB => (&choice.pair.view_b, &choice.pair.view_a),
    };
    let mut entries: Vec<(MethodLabel, String)> = choice.picks.to_vec();
    entries.push((MethodLabel::OpposingView, other.suggestions.clone()));
    entries.shuffle(rng);
    StudyItem {
        pair_id: choice.pair.pair_id.clone(),
        story_a: render_view_text(own),
        story_b: render_view_text(other),
        suggestions_a: own.suggestions.clone(),
        suggestions_b: other.suggestions.clone(),
        presented: entries
            .into_iter()
            .enumerate()
            .map(|(i, (label, text))| PresentedSuggestion {
                slot_id: (i + 1).to_string(),
                text,
                method_label: label,
            })
            .collect(),
    }
}

/// Builds a deterministic study plan. Pairs lacking one single-prompt, one
/// CoT and two feedback compromises are skipped; their ids are returned as
/// warnings.
pub fn build_assignment(
    raters: &[String],
    pairs: &[ViewPair],
    pool: &[Compromise],
    cfg: &PlanConfig,
    seed: u64,
) -> Result<(StudyPlan, Vec<String>)> {
    if raters.is_empty() {
        return Err(Error::InvalidInput("study needs at least one rater".into()));
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = raters.iter().find(|r| !seen.insert(r.as_str())) {
        return Err(Error::InvalidInput(format!("duplicate rater id `{dup}`")));
    }
    let mut by_pair: HashMap<&str, Vec<&Compromise>> = HashMap::new();
    for c in pool {
        by_pair.entry(&c.pair_id).or_default().push(c);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut eligible = Vec::new();
    let mut warnings = Vec::new();
    for pair in pairs {
        let items = by_pair
            .get(pair.pair_id.as_str())
            .map(Vec::as_slice)
            .unwrap_or(&[]);
        match choose_for_pair(pair, items, cfg.feedback_n, &mut rng)? {
            Some(c) => eligible.push(c),
            None => {
                log::warn!(
                    "pair {} lacks candidates for every study slot; excluded",
                    pair.pair_id
                );
                warnings.push(pair.pair_id.clone());
            }
        }
    }
    eligible.shuffle(&mut rng);
    if let Some(cap) = cfg.num_pairs {
        eligible.truncate(cap);
    }
    let k = cfg.items_per_rater;
    if k == 0 || eligible.len() < k {
        return Err(Error::InvalidInput(format!(
            "{} eligible pairs; each rater needs {k} distinct pairs",
            eligible.len()
        )));
    }

    let mut order: Vec<usize> = (0..raters.len()).collect();
    order.shuffle(&mut rng);
    let mut perspective = vec![Perspective::AsA; raters.len()];
    for (pos, &r) in order.iter().enumerate() {
        if pos % 2 == 1 {
            perspective[r] = Perspective::AsB;
        }
    }

    let p = eligible.len();
    let mut plans = Vec::with_capacity(raters.len());
    for (r, rater_id) in raters.iter().enumerate() {
        let idx: Vec<usize> = match cfg.assignment {
            PairAssignment::Sequential => (0..k).map(|j| (k * r + j) % p).collect(),
            PairAssignment::Random => rand::seq::index::sample(&mut rng, p, k).into_vec(),
        };
        let items = idx
            .iter()
            .map(|&i| make_item(&eligible[i], perspective[r], &mut rng))
            .collect();
        plans.push(RaterPlan {
            rater_id: rater_id.clone(),
            perspective: perspective[r],
            items,
        });
    }
    Ok((
        StudyPlan {
            seed,
            raters: plans,
        },
        warnings,
    ))
}
