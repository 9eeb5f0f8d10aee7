use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{MethodLabel, RatingRecord, StudyPlan};

/// Synthetic ratings for every planned slot. Favoured labels draw from
/// 91..=100 and all others from 1..=90, so a single favoured label always
/// ranks first. Timestamps are sequence numbers.
pub fn simulate_ratings(
    plan: &StudyPlan,
    seed: u64,
    favoured: &[MethodLabel],
) -> Vec<RatingRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for rater in &plan.raters {
        for item in &rater.items {
            for p in &item.presented {
                let rating = if favoured.contains(&p.method_label) {
                    rng.random_range(91..=100)
                } else {
                    rng.random_range(1..=90)
                };
                out.push(RatingRecord {
                    rater_id: rater.rater_id.clone(),
                    pair_id: item.pair_id.clone(),
                    slot_id: p.slot_id.clone(),
                    rating,
                    timestamp: out.len() as u64,
                });
            }
        }
    }
    out
}
