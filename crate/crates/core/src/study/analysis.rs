use std::collections::{BTreeMap, HashMap};
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{
    bootstrap_ci, permutation_test, wilcoxon_signed_rank, PermutationMode, DEFAULT_ITERATIONS,
};

use super::{MethodLabel, RatingRecord, StudyPlan};

/// How a rater's ratings collapse to one number per method for the
/// per-rater signed-rank test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RaterAggregate {
    #[default]
    MeanRating,
    FirstPrefCount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyAnalysisConfig {
    pub exclude_incomplete: bool,
    pub aggregate: RaterAggregate,
    pub baseline: MethodLabel,
    pub iterations: usize,
    pub level: f64,
    pub seed: u64,
}

impl StudyAnalysisConfig {
    pub fn new(seed: u64) -> Self {
        StudyAnalysisConfig {
            exclude_incomplete: true,
            aggregate: RaterAggregate::MeanRating,
            baseline: MethodLabel::SinglePrompt,
            iterations: DEFAULT_ITERATIONS,
            level: 0.95,
            seed,
        }
    }
}

/// One fully rated (rater, item) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub rater_id: String,
    pub pair_id: String,
    pub ratings: BTreeMap<MethodLabel, u8>,
}

/// Collects rated cells in plan order. With `exclude_incomplete`, raters
/// missing any slot contribute nothing; otherwise every fully rated item
/// counts.
pub fn cells(plan: &StudyPlan, ratings: &[RatingRecord], exclude_incomplete: bool) -> Vec<Cell> {
    let mut by_slot: HashMap<(&str, &str, &str), u8> = HashMap::new();
    for r in ratings {
        by_slot.insert((&r.rater_id, &r.pair_id, &r.slot_id), r.rating);
    }
    let mut out = Vec::new();
    for rater in &plan.raters {
        let mut rater_cells = Vec::new();
        for item in &rater.items {
            let got: Option<BTreeMap<MethodLabel, u8>> = item
                .presented
                .iter()
                .map(|p| {
                    by_slot
                        .get(&(
                            rater.rater_id.as_str(),
                            item.pair_id.as_str(),
                            p.slot_id.as_str(),
                        ))
                        .map(|v| (p.method_label, *v))
                })
                .collect();
            if let Some(r) = got {
                rater_cells.push(Cell {
                    rater_id: rater.rater_id.clone(),
                    pair_id: item.pair_id.clone(),
                    ratings: r,
                });
            }
        }
        if !exclude_incomplete || rater_cells.len() == rater.items.len() {
            out.extend(rater_cells);
        }
    }
    out
}

/// First- and second-preference credit of each label in one cell. Labels
/// sharing a rating split the positions their group occupies, so a two-way
/// tie at the top gives each label half a first and half a second
/// preference. Every cell hands out exactly one unit of each.
pub fn first_pref_credits(cell: &Cell) -> BTreeMap<MethodLabel, (f64, f64)> {
    let mut sorted: Vec<(MethodLabel, u8)> = cell.ratings.iter().map(|(l, r)| (*l, *r)).collect();
    sorted.sort_by(|a, b| b.1.cmp(&a.1));
    let mut out = BTreeMap::new();
    let mut start = 0;
    while start < sorted.len() {
        let end = start
            + sorted[start..]
                .iter()
                .take_while(|x| x.1 == sorted[start].1)
                .count();
        let g = (end - start) as f64;
        let covers = |pos: usize| {
            if (start..end).contains(&pos) {
                1.0 / g
            } else {
                0.0
            }
        };
        for (label, _) in &sorted[start..end] {
            out.insert(*label, (covers(0), covers(1)));
        }
        start = end;
    }
    out
}

/// Average rank (1 = best) of each label in one cell.
fn ranks(cell: &Cell) -> BTreeMap<MethodLabel, f64> {
    cell.ratings
        .iter()
        .map(|(l, r)| {
            let higher = cell.ratings.values().filter(|v| *v > r).count();
            let equal = cell.ratings.values().filter(|v| *v == r).count();
            (*l, higher as f64 + (equal as f64 + 1.0) / 2.0)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceRow {
    pub label: MethodLabel,
    pub first_pref: f64,
    pub second_pref: f64,
    pub first_pref_pct: f64,
    pub second_pref_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceTable {
    pub cells: usize,
    pub rows: Vec<PreferenceRow>,
}

impl PreferenceTable {
    pub fn row(&self, label: MethodLabel) -> &PreferenceRow {
        self.rows
            .iter()
            .find(|r| r.label == label)
            .expect("every label has a row")
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("method\tfirst_pref_pct\tsecond_pref_pct\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{}\t{:.1}\t{:.1}",
                r.label, r.first_pref_pct, r.second_pref_pct
            );
        }
        s
    }
}

pub fn derive_preferences(
    plan: &StudyPlan,
    ratings: &[RatingRecord],
    exclude_incomplete: bool,
) -> Result<PreferenceTable> {
    let cells = cells(plan, ratings, exclude_incomplete);
    if cells.is_empty() {
        return Err(Error::Rating("no fully rated items to analyse".into()));
    }
    let mut first: BTreeMap<MethodLabel, f64> =
        MethodLabel::ALL.iter().map(|l| (*l, 0.0)).collect();
    let mut second = first.clone();
    for c in &cells {
        for (l, (f, s)) in first_pref_credits(c) {
            *first.get_mut(&l).expect("known label") += f;
            *second.get_mut(&l).expect("known label") += s;
        }
    }
    let n = cells.len() as f64;
    Ok(PreferenceTable {
        cells: cells.len(),
        rows: MethodLabel::ALL
            .iter()
            .map(|l| PreferenceRow {
                label: *l,
                first_pref: first[l],
                second_pref: second[l],
                first_pref_pct: 100.0 * first[l] / n,
                second_pref_pct: 100.0 * second[l] / n,
            })
            .collect(),
    })
}

/// Per rater: aggregate for `method` minus aggregate for `baseline`, in
/// plan order.
pub fn per_rater_differences(
    cells: &[Cell],
    method: MethodLabel,
    baseline: MethodLabel,
    agg: RaterAggregate,
) -> Vec<f64> {
    let mut order: Vec<&str> = Vec::new();
    let mut per: HashMap<&str, (f64, f64, usize)> = HashMap::new();
    for c in cells {
        let e = per.entry(&c.rater_id).or_insert_with(|| {
            order.push(&c.rater_id);
            (0.0, 0.0, 0)
        });
        let (m, b) = match agg {
            RaterAggregate::MeanRating => (
                f64::from(c.ratings[&method]),
                f64::from(c.ratings[&baseline]),
            ),
            RaterAggregate::FirstPrefCount => {
                let credits = first_pref_credits(c);
                (credits[&method].0, credits[&baseline].0)
            }
        };
        e.0 += m;
        e.1 += b;
        e.2 += 1;
    }
    order
        .into_iter()
        .map(|r| {
            let (m, b, n) = per[r];
            match agg {
                RaterAggregate::MeanRating => (m - b) / n as f64,
                RaterAggregate::FirstPrefCount => m - b,
            }
        })
        .collect()
}

/// Per cell: (rank of `method`, rank of `baseline`).
pub fn per_item_ranks(
    cells: &[Cell],
    method: MethodLabel,
    baseline: MethodLabel,
) -> Vec<(f64, f64)> {
    cells
        .iter()
        .map(|c| {
            let r = ranks(c);
            (r[&method], r[&baseline])
        })
        .collect()
}

/// One line of the significance table. Tests compare against the
/// configured baseline and are absent on the baseline's own row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodStatsRow {
    pub label: MethodLabel,
    pub first_pref_pct: f64,
    pub ci_low_pct: f64,
    pub ci_high_pct: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wilcoxon_p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub permutation_p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyAnalysis {
    pub config: StudyAnalysisConfig,
    pub preferences: PreferenceTable,
    pub rows: Vec<MethodStatsRow>,
}

impl StudyAnalysis {
    pub fn to_tsv(&self) -> String {
        let fmt_p = |p: Option<f64>| p.map_or("-".to_string(), |p| format!("{p:.4}"));
        let mut s =
            String::from("method\tfirst_pref_pct\tci_low\tci_high\twilcoxon_p\tpermutation_p\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{}\t{:.1}\t{:.1}\t{:.1}\t{}\t{}",
                r.label,
                r.first_pref_pct,
                r.ci_low_pct,
                r.ci_high_pct,
                fmt_p(r.wilcoxon_p),
                fmt_p(r.permutation_p)
            );
        }
        s
    }
}

/// Preference table plus, per label, a bootstrap interval on the
/// first-preference share and signed-rank / permutation p-values against
/// the baseline.
pub fn analyze(
    plan: &StudyPlan,
    ratings: &[RatingRecord],
    cfg: &StudyAnalysisConfig,
) -> Result<StudyAnalysis> {
    let preferences = derive_preferences(plan, ratings, cfg.exclude_incomplete)?;
    let cells = cells(plan, ratings, cfg.exclude_incomplete);
    let credits: Vec<BTreeMap<MethodLabel, (f64, f64)>> =
        cells.iter().map(first_pref_credits).collect();
    let mut rows = Vec::new();
    for label in MethodLabel::ALL {
        let indicators: Vec<f64> = credits.iter().map(|c| c[&label].0).collect();
        let ci = bootstrap_ci(&indicators, cfg.iterations, cfg.level, cfg.seed)?;
        let (wilcoxon_p, permutation_p) = if label == cfg.baseline {
            (None, None)
        } else {
            let diffs = per_rater_differences(&cells, label, cfg.baseline, cfg.aggregate);
            let w = wilcoxon_signed_rank(&diffs)?;
            let ranks = per_item_ranks(&cells, label, cfg.baseline);
            let p = permutation_test(
                &ranks,
                PermutationMode::MonteCarlo {
                    iterations: cfg.iterations,
                    seed: cfg.seed,
                },
            )?;
            (w.p_value, p.p_value)
        };
        rows.push(MethodStatsRow {
            label,
            first_pref_pct: preferences.row(label).first_pref_pct,
            ci_low_pct: 100.0 * ci.ci_low.unwrap_or(f64::NAN),
            ci_high_pct: 100.0 * ci.ci_high.unwrap_or(f64::NAN),
            wilcoxon_p,
            permutation_p,
        });
    }
    Ok(StudyAnalysis {
        config: cfg.clone(),
        preferences,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::study::tests::small_plan;
    use proptest::prelude::*;

    fn cell(v: [u8; 5]) -> Cell {
        Cell {
            rater_id: "r".into(),
            pair_id: "p".into(),
            ratings: MethodLabel::ALL.into_iter().zip(v).collect(),
        }
    }

    fn rate_all(plan: &StudyPlan, f: impl Fn(MethodLabel) -> u8) -> Vec<RatingRecord> {
        let mut out = Vec::new();
        for r in &plan.raters {
            for item in &r.items {
                for p in &item.presented {
                    out.push(RatingRecord {
                        rater_id: r.rater_id.clone(),
                        pair_id: item.pair_id.clone(),
                        slot_id: p.slot_id.clone(),
                        rating: f(p.method_label),
                        timestamp: 0,
                    });
                }
            }
        }
        out
    }

    #[test]
    fn top_tie_splits_credit() {
        // opposing, sp, cot, fb1, fb2
        let c = first_pref_credits(&cell([10, 80, 80, 30, 20]));
        assert_eq!(c[&MethodLabel::SinglePrompt], (0.5, 0.5));
        assert_eq!(c[&MethodLabel::Cot], (0.5, 0.5));
        assert_eq!(c[&MethodLabel::CotFb1], (0.0, 0.0));
        let c = first_pref_credits(&cell([90, 50, 50, 50, 1]));
        assert_eq!(c[&MethodLabel::OpposingView], (1.0, 0.0));
        assert!((c[&MethodLabel::Cot].1 - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ranks_average_ties() {
        let r = ranks(&cell([10, 80, 80, 30, 20]));
        assert_eq!(r[&MethodLabel::SinglePrompt], 1.5);
        assert_eq!(r[&MethodLabel::CotFb1], 3.0);
        assert_eq!(r[&MethodLabel::OpposingView], 5.0);
    }

    #[test]
    fn dominant_label_takes_every_first_preference() {
        let plan = small_plan(1);
        let ratings = rate_all(&plan, |l| {
            if l == MethodLabel::CotFb1 {
                100
            } else {
                40 + l as u8
            }
        });
        let t = derive_preferences(&plan, &ratings, true).unwrap();
        assert_eq!(t.cells, 5);
        assert_eq!(t.row(MethodLabel::CotFb1).first_pref_pct, 100.0);
        assert_eq!(t.row(MethodLabel::SinglePrompt).first_pref_pct, 0.0);
    }

    #[test]
    fn incomplete_raters_are_excluded_by_default() {
        let plan = small_plan(2);
        let mut ratings = rate_all(&plan, |_| 50);
        ratings.retain(|r| {
            !(r.rater_id == "r1"
                && r.slot_id == "3"
                && r.pair_id == plan.raters[1].items[4].pair_id)
        });
        assert_eq!(cells(&plan, &ratings, true).len(), 5);
        assert_eq!(cells(&plan, &ratings, false).len(), 9);
    }

    #[test]
    fn analysis_of_a_clear_winner() {
        let plan = small_plan(20);
        let ratings = rate_all(&plan, |l| match l {
            MethodLabel::CotFb2 => 95,
            MethodLabel::SinglePrompt => 20,
            _ => 50,
        });
        let mut cfg = StudyAnalysisConfig::new(3);
        cfg.iterations = 2000;
        let a = analyze(&plan, &ratings, &cfg).unwrap();
        let fb2 = a
            .rows
            .iter()
            .find(|r| r.label == MethodLabel::CotFb2)
            .unwrap();
        assert_eq!(
            (fb2.first_pref_pct, fb2.ci_low_pct, fb2.ci_high_pct),
            (100.0, 100.0, 100.0)
        );
        assert!(fb2.wilcoxon_p.unwrap() < 0.001);
        assert!(fb2.permutation_p.unwrap() < 0.01);
        let sp = a
            .rows
            .iter()
            .find(|r| r.label == MethodLabel::SinglePrompt)
            .unwrap();
        assert!(sp.wilcoxon_p.is_none());
        assert_eq!(a.to_tsv().lines().count(), 6);
    }

    proptest! {
        #[test]
        fn credits_sum_to_one(v in prop::array::uniform5(1u8..=100)) {
            let c = first_pref_credits(&cell(v));
            let f: f64 = c.values().map(|x| x.0).sum();
            let s: f64 = c.values().map(|x| x.1).sum();
            prop_assert!((f - 1.0).abs() < 1e-12 && (s - 1.0).abs() < 1e-12);
            let rs: f64 = ranks(&cell(v)).values().sum();
            prop_assert!((rs - 15.0).abs() < 1e-12);
        }

        #[test]
        fn first_prefs_sum_to_cells(seed in 0u64..50, raters in 1usize..6) {
            let plan = small_plan(raters);
            let ratings = rate_all(&plan, |l| ((seed as u8).wrapping_mul(7).wrapping_add(l as u8 * 13)) % 100 + 1);
            let t = derive_preferences(&plan, &ratings, true).unwrap();
            let total: f64 = t.rows.iter().map(|r| r.first_pref).sum();
            prop_assert!((total - t.cells as f64).abs() < 1e-9);
            prop_assert_eq!(t.cells, raters * 5);
        }
    }
}
