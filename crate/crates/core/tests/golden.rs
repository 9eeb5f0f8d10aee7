use std::path::{Path, PathBuf};

use serde::Deserialize;

use compromise_core::corpus::{load_view_pairs, write_view_pairs};
use compromise_core::scorer::{EmbeddingModel, EmpathyScorer, HashEncoder};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

#[derive(Deserialize)]
struct Case {
    dim: usize,
    text_1: String,
    text_2: String,
    similarity: f64,
}

#[derive(Deserialize)]
struct Golden {
    cases: Vec<Case>,
}

#[test]
fn hash_scorer_matches_frozen_values() {
    let golden: Golden =
        serde_json::from_str(&std::fs::read_to_string(fixture("hash_scores.json")).unwrap())
            .unwrap();
    assert_eq!(golden.cases.len(), 12);
    for c in &golden.cases {
        let m = EmbeddingModel::new(HashEncoder::new(c.dim));
        let got = m.similarity(&c.text_1, &c.text_2).unwrap();
        assert!(
            (got - c.similarity).abs() <= 1e-12,
            "dim {}: {got} vs {} for {:?}",
            c.dim,
            c.similarity,
            c.text_1
        );
    }
}

#[test]
fn fixture_pairs_survive_a_write_read_cycle() {
    let pairs = load_view_pairs(fixture("pairs.jsonl")).unwrap();
    assert_eq!(pairs.len(), 5);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("pairs.jsonl");
    write_view_pairs(&out, &pairs).unwrap();
    assert_eq!(load_view_pairs(&out).unwrap(), pairs);
}
