//! Candidate selection by empathic neutrality and the per-topic strategy
//! distribution of the selected candidates.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::compromise::{feedback_contribution, Compromise, Strategy};
use crate::corpus::Topic;
use crate::error::{Error, Result};
use crate::scorer::EmpathyScorePair;

pub const DEFAULT_K: usize = 4;

pub fn neutrality_gap(s: EmpathyScorePair) -> f64 {
    s.gap()
}

/// Indices of `items` ordered from most to least neutral: gap ascending,
/// then combined score descending, then input position.
pub fn rank_by_neutrality(items: &[Compromise]) -> Result<Vec<usize>> {
    let scores: Vec<EmpathyScorePair> = items
        .iter()
        .map(|c| {
            c.scores.ok_or_else(|| Error::Unscored {
                pair_id: c.pair_id.clone(),
            })
        })
        .collect::<Result<_>>()?;
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.sort_by(|&i, &j| {
        let (a, b) = (scores[i], scores[j]);
        a.gap()
            .total_cmp(&b.gap())
            .then_with(|| (b.score_a + b.score_b).total_cmp(&(a.score_a + a.score_b)))
            .then_with(|| i.cmp(&j))
    });
    Ok(idx)
}

/// Picks the `k` most neutral compromises of every pair. Pairs appear in
/// order of first occurrence in `pool`; within a pair, selections are in
/// rank order.
pub fn select_candidates(pool: &[Compromise], k: usize) -> Result<Vec<Compromise>> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<Compromise>> = BTreeMap::new();
    for c in pool {
        let g = groups.entry(&c.pair_id).or_insert_with(|| {
            order.push(&c.pair_id);
            Vec::new()
        });
        g.push(c.clone());
    }
    let mut out = Vec::with_capacity(order.len() * k);
    for pair_id in order {
        let group = &groups[pair_id];
        let ranked = rank_by_neutrality(group)?;
        if ranked.len() < k {
            return Err(Error::InsufficientCandidates {
                pair_id: pair_id.to_string(),
                available: ranked.len(),
                requested: k,
            });
        }
        out.extend(ranked[..k].iter().map(|&i| group[i].clone()));
    }
    Ok(out)
}

/// Replaces each pair's feedback trajectory with the `n` compromises it
/// contributes (see [`feedback_contribution`]); other strategies pass
/// through unchanged. Pair order of first occurrence is kept, and each
/// pair's feedback items follow its other items.
pub fn candidate_pool(generated: &[Compromise], n: usize) -> Result<Vec<Compromise>> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, (Vec<Compromise>, Vec<Compromise>)> = BTreeMap::new();
    for c in generated {
        let g = groups.entry(&c.pair_id).or_insert_with(|| {
            order.push(&c.pair_id);
            Default::default()
        });
        if c.strategy == Strategy::CotFeedback {
            g.1.push(c.clone());
        } else {
            g.0.push(c.clone());
        }
    }
    let mut out = Vec::with_capacity(generated.len());
    for pair_id in order {
        let (other, fb) = &groups[pair_id];
        out.extend(other.iter().cloned());
        if !fb.is_empty() {
            out.extend(feedback_contribution(fb, n)?);
        }
    }
    Ok(out)
}

/// Percentage of selected candidates contributed by each strategy, per
/// topic. Every strategy appears in every row, possibly at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub topics: BTreeMap<Topic, BTreeMap<Strategy, f64>>,
    pub counts: BTreeMap<Topic, BTreeMap<Strategy, usize>>,
}

pub fn strategy_distribution(
    selected: &[Compromise],
    topic_of: &BTreeMap<String, Topic>,
) -> Result<SelectionReport> {
    let mut counts: BTreeMap<Topic, BTreeMap<Strategy, usize>> = BTreeMap::new();
    for c in selected {
        let topic = topic_of.get(&c.pair_id).ok_or_else(|| {
            Error::InvalidInput(format!("no topic known for pair `{}`", c.pair_id))
        })?;
        let row = counts
            .entry(*topic)
            .or_insert_with(|| Strategy::ALL.iter().map(|&s| (s, 0)).collect());
        *row.get_mut(&c.strategy).expect("all strategies present") += 1;
    }
    let topics = counts
        .iter()
        .map(|(&t, row)| {
            let total: usize = row.values().sum();
            let pct = row
                .iter()
                .map(|(&s, &n)| (s, 100.0 * n as f64 / total as f64))
                .collect();
            (t, pct)
        })
        .collect();
    Ok(SelectionReport { topics, counts })
}

impl SelectionReport {
    /// Tab-separated table, one row per topic.
    pub fn write_tsv(&self, mut w: impl Write) -> std::io::Result<()> {
        let header: Vec<&str> = Strategy::ALL.iter().map(|s| s.short_label()).collect();
        writeln!(w, "topic\t{}", header.join("\t"))?;
        for (topic, row) in &self.topics {
            let cells: Vec<String> = Strategy::ALL
                .iter()
                .map(|s| format!("{:.2}", row[s]))
                .collect();
            writeln!(w, "{}\t{}", topic.as_str(), cells.join("\t"))?;
        }
        Ok(())
    }
}

/// Writes selected candidates as CSV with provenance columns.
pub fn write_selected_csv(selected: &[Compromise], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| Error::InvalidInput(format!("csv: {e}"));
    out.write_record([
        "pair_id",
        "rank",
        "strategy",
        "iteration",
        "score_a",
        "score_b",
        "gap",
        "text",
    ])
    .map_err(csv_err)?;
    let mut rank = 0;
    let mut last: Option<&str> = None;
    for c in selected {
        rank = if last == Some(c.pair_id.as_str()) {
            rank + 1
        } else {
            1
        };
        last = Some(&c.pair_id);
        let s = c.scores.ok_or_else(|| Error::Unscored {
            pair_id: c.pair_id.clone(),
        })?;
        out.write_record([
            c.pair_id.clone(),
            rank.to_string(),
            c.strategy.to_string(),
            c.iteration.to_string(),
            format!("{:.6}", s.score_a),
            format!("{:.6}", s.score_b),
            format!("{:.6}", s.gap()),
            c.text.clone(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()
        .map_err(|e| Error::InvalidInput(format!("csv: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compromise::Strategy;
    use proptest::prelude::*;

    fn cand(pair: &str, s: Strategy, a: f64, b: f64) -> Compromise {
        Compromise {
            pair_id: pair.into(),
            strategy: s,
            iteration: 0,
            text: format!("{a} {b}"),
            scores: Some(EmpathyScorePair::new(a, b)),
        }
    }

    #[test]
    fn gap_examples() {
        assert_eq!(neutrality_gap(EmpathyScorePair::new(0.7, 0.7)), 0.0);
        assert!((neutrality_gap(EmpathyScorePair::new(0.9, 0.4)) - 0.5).abs() < 1e-12);
        assert!((neutrality_gap(EmpathyScorePair::new(0.4, 0.9)) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn tie_broken_by_score_sum_then_order() {
        let pool = vec![
            cand("p", Strategy::Cot, 0.5, 0.25),
            cand("p", Strategy::CotFeedback, 0.75, 0.5),
            cand("p", Strategy::SinglePrompt, 0.875, 0.0),
            cand("p", Strategy::CotLlm, 0.5, 0.25),
        ];
        let sel = select_candidates(&pool, 2).unwrap();
        assert_eq!(sel[0].strategy, Strategy::CotFeedback);
        assert_eq!(sel[1].strategy, Strategy::Cot);
    }

    #[test]
    fn k_equal_to_pool_returns_all_and_more_is_an_error() {
        let pool: Vec<_> = (0..4)
            .map(|i| cand("p", Strategy::Cot, 0.1 * i as f64, 0.0))
            .collect();
        assert_eq!(select_candidates(&pool, 4).unwrap().len(), 4);
        assert!(matches!(
            select_candidates(&pool, 5),
            Err(Error::InsufficientCandidates {
                available: 4,
                requested: 5,
                ..
            })
        ));
    }

    #[test]
    fn candidate_pool_keeps_refined_feedback_only() {
        let mut pool = vec![cand("p", Strategy::SinglePrompt, 0.5, 0.1)];
        for (it, gap) in [(0, 0.05), (1, 0.3), (1, 0.2), (2, 0.1)] {
            let mut c = cand("p", Strategy::CotFeedback, 0.5 + gap, 0.5);
            c.iteration = it;
            pool.push(c);
        }
        pool.push(cand("q", Strategy::Cot, 0.5, 0.5));
        let c = candidate_pool(&pool, 2).unwrap();
        let got: Vec<(&str, u32)> = c
            .iter()
            .map(|c| (c.pair_id.as_str(), c.iteration))
            .collect();
        assert_eq!(got, [("p", 0), ("p", 2), ("p", 1), ("q", 0)]);
        assert!((c[2].gap().unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn unscored_is_an_error() {
        let mut c = cand("p", Strategy::Cot, 0.0, 0.0);
        c.scores = None;
        assert!(matches!(
            select_candidates(&[c], 1),
            Err(Error::Unscored { .. })
        ));
    }

    #[test]
    fn distribution_hand_case() {
        let mut sel = Vec::new();
        for (s, n) in [
            (Strategy::CotFeedback, 5),
            (Strategy::CotLlm, 3),
            (Strategy::Cot, 2),
        ] {
            sel.extend((0..n).map(|_| cand("p", s, 0.0, 0.0)));
        }
        let topics = BTreeMap::from([("p".to_string(), Topic::Safe)]);
        let r = strategy_distribution(&sel, &topics).unwrap();
        let row = &r.topics[&Topic::Safe];
        assert_eq!(row[&Strategy::CotFeedback], 50.0);
        assert_eq!(row[&Strategy::CotLlm], 30.0);
        assert_eq!(row[&Strategy::Cot], 20.0);
        assert_eq!(row[&Strategy::SinglePrompt], 0.0);
        let mut tsv = Vec::new();
        r.write_tsv(&mut tsv).unwrap();
        assert_eq!(
            String::from_utf8(tsv).unwrap(),
            "topic\tSP\tCoT\tCoT+LLM\tCoT+FB\nsafe\t0.00\t20.00\t30.00\t50.00\n"
        );
    }

    #[test]
    fn csv_has_provenance_columns() {
        let sel = vec![
            cand("p", Strategy::Cot, 0.5, 0.25),
            cand("p", Strategy::Cot, 0.5, 0.0),
        ];
        let mut buf = Vec::new();
        write_selected_csv(&sel, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "pair_id,rank,strategy,iteration,score_a,score_b,gap,text"
        );
        assert!(lines[2].starts_with("p,2,cot,0,"));
    }

    proptest! {
        #[test]
        fn selected_never_worse_than_unselected(
            scores in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 4..20),
            k in 1usize..4,
        ) {
            let pool: Vec<_> = scores.iter().map(|&(a, b)| cand("p", Strategy::Cot, a, b)).collect();
            let sel = select_candidates(&pool, k).unwrap();
            let worst = sel.iter().map(|c| c.gap().unwrap()).fold(0.0, f64::max);
            let picked: Vec<&str> = sel.iter().map(|c| c.text.as_str()).collect();
            let mut unselected = 0;
            for c in &pool {
                if !picked.contains(&c.text.as_str()) {
                    prop_assert!(c.gap().unwrap() >= worst);
                    unselected += 1;
                }
            }
            prop_assert!(unselected <= pool.len() - k);
        }

        #[test]
        fn distribution_rows_sum_to_100(strats in prop::collection::vec(0usize..4, 1..50)) {
            let sel: Vec<_> = strats.iter().map(|&i| cand("p", Strategy::ALL[i], 0.0, 0.0)).collect();
            let topics = BTreeMap::from([("p".to_string(), Topic::Welcome)]);
            let r = strategy_distribution(&sel, &topics).unwrap();
            let total: f64 = r.topics[&Topic::Welcome].values().sum();
            prop_assert!((total - 100.0).abs() < 0.01);
        }
    }
}
