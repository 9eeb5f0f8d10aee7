//! Human acceptability study: assignment of raters to perspectives and
//! pairs, blinded presentation, rating persistence, and derivation of
//! preference tables and per-rater / per-item statistics inputs.

mod analysis;
mod instructions;
mod plan;
mod simulate;
mod store;

pub use analysis::{
    analyze, cells, derive_preferences, first_pref_credits, per_item_ranks, per_rater_differences,
    Cell, MethodStatsRow, PreferenceRow, PreferenceTable, RaterAggregate, StudyAnalysis,
    StudyAnalysisConfig,
};
pub use instructions::{instructions, rating_intro, Instructions, DEMOGRAPHIC_QUESTIONS};
pub use plan::{build_assignment, PairAssignment, PlanConfig};
pub use simulate::simulate_ratings;
pub use store::{read_ratings_log, write_ratings_log, LogEntry, Progress, RatingStore};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RATING_MIN: u8 = 1;
pub const RATING_MAX: u8 = 100;
pub const ITEMS_PER_RATER: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Perspective {
    #[serde(rename = "as_A")]
    AsA,
    #[serde(rename = "as_B")]
    AsB,
}

/// What produced a presented suggestion. Never sent to raters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodLabel {
    OpposingView,
    SinglePrompt,
    Cot,
    #[serde(rename = "cot_fb_1")]
    CotFb1,
    #[serde(rename = "cot_fb_2")]
    CotFb2,
}

impl MethodLabel {
    pub const ALL: [MethodLabel; 5] = [
        MethodLabel::OpposingView,
        MethodLabel::SinglePrompt,
        MethodLabel::Cot,
        MethodLabel::CotFb1,
        MethodLabel::CotFb2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodLabel::OpposingView => "opposing_view",
            MethodLabel::SinglePrompt => "single_prompt",
            MethodLabel::Cot => "cot",
            MethodLabel::CotFb1 => "cot_fb_1",
            MethodLabel::CotFb2 => "cot_fb_2",
        }
    }
}

impl fmt::Display for MethodLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        MethodLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = MethodLabel::ALL.iter().map(|l| l.as_str()).collect();
                Error::InvalidInput(format!(
                    "unknown method label `{s}`; expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresentedSuggestion {
    pub slot_id: String,
    pub text: String,
    pub method_label: MethodLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyItem {
    pub pair_id: String,
    /// Rendered story of the rater's own perspective (Person A).
    pub story_a: String,
    /// Rendered story of the other perspective (Person B).
    pub story_b: String,
    pub suggestions_a: String,
    pub suggestions_b: String,
    pub presented: Vec<PresentedSuggestion>,
}

impl StudyItem {
    pub fn label_of(&self, slot_id: &str) -> Option<MethodLabel> {
        self.presented
            .iter()
            .find(|p| p.slot_id == slot_id)
            .map(|p| p.method_label)
    }

    /// The item as sent to a rater: suggestion texts and slot ids only.
    pub fn blinded(&self, rater_id: &str, index: usize, total: usize) -> BlindedItem {
        BlindedItem {
            rater_id: rater_id.to_string(),
            item_index: index,
            total_items: total,
            pair_id: self.pair_id.clone(),
            story_a: self.story_a.clone(),
            story_b: self.story_b.clone(),
            suggestions_a: self.suggestions_a.clone(),
            suggestions_b: self.suggestions_b.clone(),
            suggestions: self
                .presented
                .iter()
                .map(|p| BlindedSuggestion {
                    slot_id: p.slot_id.clone(),
                    text: p.text.clone(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlindedSuggestion {
    pub slot_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlindedItem {
    pub rater_id: String,
    pub item_index: usize,
    pub total_items: usize,
    pub pair_id: String,
    pub story_a: String,
    pub story_b: String,
    pub suggestions_a: String,
    pub suggestions_b: String,
    pub suggestions: Vec<BlindedSuggestion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaterPlan {
    pub rater_id: String,
    pub perspective: Perspective,
    pub items: Vec<StudyItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyPlan {
    pub seed: u64,
    pub raters: Vec<RaterPlan>,
}

impl StudyPlan {
    pub fn rater(&self, rater_id: &str) -> Option<&RaterPlan> {
        self.raters.iter().find(|r| r.rater_id == rater_id)
    }

    pub fn item(&self, rater_id: &str, pair_id: &str) -> Option<&StudyItem> {
        self.rater(rater_id)?
            .items
            .iter()
            .find(|i| i.pair_id == pair_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatingRecord {
    pub rater_id: String,
    pub pair_id: String,
    pub slot_id: String,
    pub rating: u8,
    /// Milliseconds since the Unix epoch, or a sequence number for
    /// simulated ratings.
    #[serde(default)]
    pub timestamp: u64,
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::compromise::{Compromise, Strategy};
    use crate::corpus::{Polarity, Topic, ViewPair, Viewpoint};
    use crate::scorer::EmpathyScorePair;

    pub(crate) fn pairs(n: usize) -> Vec<ViewPair> {
        (0..n)
            .map(|i| {
                let v = |s: String, p| Viewpoint {
                    place_description: format!("Place {i}"),
                    reason: "because".into(),
                    suggestions: s,
                    polarity: p,
                    topic: Topic::Safe,
                    demographics: None,
                };
                ViewPair::new(
                    format!("p{i}"),
                    v(format!("keep {i} open"), Polarity::Positive),
                    v(format!("close {i} at night"), Polarity::Negative),
                )
                .unwrap()
            })
            .collect()
    }

    pub(crate) fn pool(pairs: &[ViewPair]) -> Vec<Compromise> {
        let mut out = Vec::new();
        for p in pairs {
            let mk = |strategy, iteration, gap: f64| Compromise {
                pair_id: p.pair_id.clone(),
                strategy,
                iteration,
                // Texts must not contain label names; the blinding test
                // searches payloads for them.
                text: format!(
                    "{} idea {}{iteration}",
                    p.pair_id,
                    match strategy {
                        Strategy::SinglePrompt => "x",
                        Strategy::Cot => "y",
                        _ => "z",
                    }
                ),
                scores: Some(EmpathyScorePair {
                    score_a: 0.5 + gap,
                    score_b: 0.5,
                }),
            };
            out.push(mk(Strategy::SinglePrompt, 0, 0.3));
            out.push(mk(Strategy::Cot, 0, 0.2));
            for it in 0..3 {
                out.push(mk(Strategy::CotFeedback, it, 0.2 / f64::from(it + 1)));
            }
        }
        out
    }

    pub(crate) fn small_plan(raters: usize) -> StudyPlan {
        let ps = pairs(10);
        let ids: Vec<String> = (0..raters).map(|i| format!("r{i}")).collect();
        build_assignment(&ids, &ps, &pool(&ps), &PlanConfig::default(), 7)
            .unwrap()
            .0
    }

    #[test]
    fn plan_shape_and_balance() {
        let plan = small_plan(7);
        let a = plan
            .raters
            .iter()
            .filter(|r| r.perspective == Perspective::AsA)
            .count();
        assert!(a == 3 || a == 4);
        for r in &plan.raters {
            assert_eq!(r.items.len(), ITEMS_PER_RATER);
            let distinct: std::collections::HashSet<_> =
                r.items.iter().map(|i| &i.pair_id).collect();
            assert_eq!(distinct.len(), ITEMS_PER_RATER);
            for item in &r.items {
                let mut labels: Vec<MethodLabel> =
                    item.presented.iter().map(|p| p.method_label).collect();
                labels.sort();
                assert_eq!(labels, MethodLabel::ALL.to_vec());
                let slots: Vec<&str> = item.presented.iter().map(|p| p.slot_id.as_str()).collect();
                assert_eq!(slots, ["1", "2", "3", "4", "5"]);
            }
        }
        assert_eq!(plan, small_plan(7));
        assert_eq!(small_plan(1).raters.len(), 1);
    }

    #[test]
    fn opposing_view_follows_perspective() {
        let ps = pairs(10);
        for r in &small_plan(4).raters {
            for item in &r.items {
                let p = ps.iter().find(|p| p.pair_id == item.pair_id).unwrap();
                let other = match r.perspective {
                    Perspective::AsA => &p.view_b,
                    Perspective::AsB => &p.view_a,
                };
                let opp = item
                    .presented
                    .iter()
                    .find(|x| x.method_label == MethodLabel::OpposingView)
                    .unwrap();
                assert_eq!(opp.text, other.suggestions);
                assert_eq!(item.suggestions_b, other.suggestions);
            }
        }
    }

    #[test]
    fn fb_slots_come_from_refinement_in_neutrality_order() {
        let plan = small_plan(2);
        let item = &plan.raters[0].items[0];
        let text = |l| {
            item.presented
                .iter()
                .find(|p| p.method_label == l)
                .unwrap()
                .text
                .clone()
        };
        assert!(text(MethodLabel::CotFb1).ends_with(" z2"));
        assert!(text(MethodLabel::CotFb2).ends_with(" z1"));
    }

    #[test]
    fn fifty_raters_cover_one_hundred_pairs() {
        let ps = pairs(120);
        let ids: Vec<String> = (0..50).map(|i| format!("r{i}")).collect();
        let cfg = PlanConfig {
            num_pairs: Some(100),
            ..PlanConfig::default()
        };
        let (plan, warn) = build_assignment(&ids, &ps, &pool(&ps), &cfg, 1).unwrap();
        assert!(warn.is_empty());
        let a = plan
            .raters
            .iter()
            .filter(|r| r.perspective == Perspective::AsA)
            .count();
        assert_eq!(a, 25);
        let distinct: std::collections::HashSet<_> = plan
            .raters
            .iter()
            .flat_map(|r| r.items.iter().map(|i| i.pair_id.clone()))
            .collect();
        assert_eq!(distinct.len(), 100);
    }

    #[test]
    fn thin_pairs_are_excluded_with_warning() {
        let ps = pairs(6);
        let mut pool = pool(&ps);
        pool.retain(|c| !(c.pair_id == "p2" && c.strategy == Strategy::Cot));
        let (plan, warn) =
            build_assignment(&["x".to_string()], &ps, &pool, &PlanConfig::default(), 0).unwrap();
        assert_eq!(warn, ["p2"]);
        assert!(plan.raters[0].items.iter().all(|i| i.pair_id != "p2"));
        pool.retain(|c| c.pair_id != "p3");
        assert!(
            build_assignment(&["x".to_string()], &ps, &pool, &PlanConfig::default(), 0).is_err()
        );
    }

    #[test]
    fn label_serde_matches_as_str() {
        for l in MethodLabel::ALL {
            assert_eq!(
                serde_json::to_string(&l).unwrap(),
                format!("\"{}\"", l.as_str())
            );
            assert_eq!(l.as_str().parse::<MethodLabel>().unwrap(), l);
        }
    }

    #[test]
    fn blinded_items_carry_no_labels() {
        let plan = small_plan(3);
        for r in &plan.raters {
            for (i, item) in r.items.iter().enumerate() {
                let json = serde_json::to_string(&item.blinded(&r.rater_id, i, 5)).unwrap();
                for l in MethodLabel::ALL {
                    assert!(!json.contains(l.as_str()), "{json}");
                }
                assert!(!json.contains("method_label"));
            }
        }
    }
}
