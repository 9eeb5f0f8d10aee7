//! View-pair and story-pair data: file formats, validation, canonical
//! text rendering and deterministic train/dev/test splitting.
//!
//! Both file formats are line-delimited JSON with a `schema_version` field.
//! See `schemas/` at the repository root for the field-level description.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topic {
    Safe,
    Welcome,
}

impl Topic {
    pub fn as_str(self) -> &'static str {
        match self {
            Topic::Safe => "safe",
            Topic::Welcome => "welcome",
        }
    }
}

/// One person's account of a place.
#[derive(Debug, Clone, PartialEq)]
pub struct Viewpoint {
    pub place_description: String,
    pub reason: String,
    pub suggestions: String,
    pub polarity: Polarity,
    pub topic: Topic,
    pub demographics: Option<BTreeMap<String, String>>,
}

impl Viewpoint {
    pub fn validate(&self) -> std::result::Result<(), String> {
        for (name, value) in [
            ("place_description", &self.place_description),
            ("reason", &self.reason),
            ("suggestions", &self.suggestions),
        ] {
            if value.trim().is_empty() {
                return Err(format!("field `{name}` is empty"));
            }
        }
        Ok(())
    }
}

/// A positive (`view_a`) and negative (`view_b`) viewpoint on the same kind
/// of place.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewPair {
    pub pair_id: String,
    pub topic: Topic,
    pub view_a: Viewpoint,
    pub view_b: Viewpoint,
}

impl ViewPair {
    pub fn new(pair_id: impl Into<String>, view_a: Viewpoint, view_b: Viewpoint) -> Result<Self> {
        let pair = ViewPair {
            pair_id: pair_id.into(),
            topic: view_a.topic,
            view_a,
            view_b,
        };
        pair.validate().map_err(Error::InvalidInput)?;
        Ok(pair)
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.pair_id.trim().is_empty() {
            return Err("pair_id is empty".into());
        }
        if self.view_a.polarity != Polarity::Positive {
            return Err("view_a must be the positive viewpoint".into());
        }
        if self.view_b.polarity != Polarity::Negative {
            return Err("view_b must be the negative viewpoint".into());
        }
        if self.view_a.topic != self.topic || self.view_b.topic != self.topic {
            return Err("both viewpoints must share the pair topic".into());
        }
        self.view_a.validate().map_err(|e| format!("view_a: {e}"))?;
        self.view_b.validate().map_err(|e| format!("view_b: {e}"))?;
        Ok(())
    }

    /// Returns a copy with the two viewpoints exchanged. The result does not
    /// satisfy the polarity invariant; it exists for symmetry checks.
    pub fn swapped(&self) -> ViewPair {
        ViewPair {
            pair_id: self.pair_id.clone(),
            topic: self.topic,
            view_a: self.view_b.clone(),
            view_b: self.view_a.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ViewRecord {
    place_description: Option<String>,
    reason: Option<String>,
    suggestions: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    demographics: Option<BTreeMap<String, String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairRecord {
    schema_version: u32,
    pair_id: String,
    topic: Topic,
    view_a: ViewRecord,
    view_b: ViewRecord,
}

impl ViewRecord {
    fn into_viewpoint(
        self,
        which: &str,
        polarity: Polarity,
        topic: Topic,
    ) -> std::result::Result<Viewpoint, String> {
        let field = |v: Option<String>, name: &str| {
            v.ok_or_else(|| format!("{which}: missing field `{name}`"))
        };
        let v = Viewpoint {
            place_description: field(self.place_description, "place_description")?,
            reason: field(self.reason, "reason")?,
            suggestions: field(self.suggestions, "suggestions")?,
            polarity,
            topic,
            demographics: self.demographics,
        };
        v.validate().map_err(|e| format!("{which}: {e}"))?;
        Ok(v)
    }

    fn from_viewpoint(v: &Viewpoint) -> Self {
        ViewRecord {
            place_description: Some(v.place_description.clone()),
            reason: Some(v.reason.clone()),
            suggestions: Some(v.suggestions.clone()),
            demographics: v.demographics.clone(),
        }
    }
}

/// Parses a view-pair file. Blank lines are skipped; line numbers in errors
/// are 1-based.
pub fn parse_view_pairs(reader: impl BufRead) -> Result<Vec<ViewPair>> {
    let mut pairs = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Record {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PairRecord = serde_json::from_str(&line).map_err(|e| Error::Record {
            line: line_no,
            message: e.to_string(),
        })?;
        if record.schema_version != SCHEMA_VERSION {
            return Err(Error::Record {
                line: line_no,
                message: format!(
                    "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                    record.schema_version
                ),
            });
        }
        let to_err = |message: String| Error::Record {
            line: line_no,
            message,
        };
        let topic = record.topic;
        let view_a = record
            .view_a
            .into_viewpoint("view_a", Polarity::Positive, topic)
            .map_err(to_err)?;
        let view_b = record
            .view_b
            .into_viewpoint("view_b", Polarity::Negative, topic)
            .map_err(to_err)?;
        let pair = ViewPair {
            pair_id: record.pair_id,
            topic,
            view_a,
            view_b,
        };
        pair.validate().map_err(to_err)?;
        if !seen.insert(pair.pair_id.clone()) {
            return Err(Error::DuplicatePair(pair.pair_id));
        }
        pairs.push(pair);
    }
    Ok(pairs)
}

pub fn load_view_pairs(path: impl AsRef<Path>) -> Result<Vec<ViewPair>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_view_pairs(BufReader::new(file))
}

pub fn write_view_pairs(path: impl AsRef<Path>, pairs: &[ViewPair]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for pair in pairs {
        let record = PairRecord {
            schema_version: SCHEMA_VERSION,
            pair_id: pair.pair_id.clone(),
            topic: pair.topic,
            view_a: ViewRecord::from_viewpoint(&pair.view_a),
            view_b: ViewRecord::from_viewpoint(&pair.view_b),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// A story pair with a human empathy rating normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatedStoryPair {
    pub text_1: String,
    pub text_2: String,
    pub empathy_rating: f64,
}

/// Raw scale of the ratings in a similarity-pair file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatingScale {
    pub min: f64,
    pub max: f64,
}

impl Default for RatingScale {
    fn default() -> Self {
        RatingScale { min: 0.0, max: 1.0 }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoryRecord {
    schema_version: u32,
    text_1: String,
    text_2: String,
    rating: f64,
}

pub fn parse_rated_pairs(reader: impl BufRead, scale: RatingScale) -> Result<Vec<RatedStoryPair>> {
    if !(scale.max > scale.min) {
        return Err(Error::InvalidInput(format!(
            "rating scale max {} must exceed min {}",
            scale.max, scale.min
        )));
    }
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Record {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Record {
            line: line_no,
            message,
        };
        let rec: StoryRecord = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        if rec.schema_version != SCHEMA_VERSION {
            return Err(err(format!(
                "unsupported schema_version {}",
                rec.schema_version
            )));
        }
        if rec.text_1.trim().is_empty() || rec.text_2.trim().is_empty() {
            return Err(err("story text is empty".into()));
        }
        let normalized = (rec.rating - scale.min) / (scale.max - scale.min);
        if !(0.0..=1.0).contains(&normalized) {
            return Err(err(format!(
                "rating {} outside declared scale [{}, {}]",
                rec.rating, scale.min, scale.max
            )));
        }
        out.push(RatedStoryPair {
            text_1: rec.text_1,
            text_2: rec.text_2,
            empathy_rating: normalized,
        });
    }
    Ok(out)
}

pub fn load_rated_pairs(path: impl AsRef<Path>, scale: RatingScale) -> Result<Vec<RatedStoryPair>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_rated_pairs(BufReader::new(file), scale)
}

fn feeling_clause(v: &Viewpoint) -> &'static str {
    match (v.topic, v.polarity) {
        (Topic::Safe, Polarity::Positive) => "I feel safe here because ",
        (Topic::Safe, Polarity::Negative) => "I feel safety could be improved here. ",
        (Topic::Welcome, Polarity::Positive) => {
            "I feel welcomed by others for who I am in this location because "
        }
        (Topic::Welcome, Polarity::Negative) => {
            "I feel excluded by others for who I am in this location because "
        }
    }
}

fn goal_phrase(v: &Viewpoint) -> &'static str {
    match (v.topic, v.polarity) {
        (Topic::Safe, _) => "safer",
        (Topic::Welcome, Polarity::Positive) => "more welcoming",
        (Topic::Welcome, Polarity::Negative) => "less excluding and more welcoming",
    }
}

fn terminated(s: &str) -> String {
    let s = s.trim();
    if s.ends_with(['.', '!', '?']) {
        s.to_string()
    } else {
        format!("{s}.")
    }
}

/// Flattens a viewpoint into the first-person paragraph used in prompts and
/// for similarity scoring.
pub fn render_view_text(v: &Viewpoint) -> String {
    format!(
        "I am writing about this place: {} {}{} Some ways this place could be modified to be {} are: {}",
        terminated(&v.place_description),
        feeling_clause(v),
        terminated(&v.reason),
        goal_phrase(v),
        v.suggestions.trim()
    )
}

/// Like [`render_view_text`], optionally followed by the author's
/// demographics (sorted by attribute name).
pub fn render_view_text_with(v: &Viewpoint, include_demographics: bool) -> String {
    let base = render_view_text(v);
    match (&v.demographics, include_demographics) {
        (Some(d), true) if !d.is_empty() => {
            let attrs: Vec<String> = d.iter().map(|(k, val)| format!("{k}: {val}")).collect();
            format!("{base} About me: {}.", attrs.join(", "))
        }
        _ => base,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

/// Seeded shuffle followed by floor allocation of the dev and test shares;
/// the remainder goes to train.
pub fn split_dataset(
    ids: &[String],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<SplitAssignment> {
    let (r_train, r_dev, r_test) = ratios;
    if [r_train, r_dev, r_test]
        .iter()
        .any(|r| !(r.is_finite() && *r > 0.0))
    {
        return Err(Error::InvalidInput(format!(
            "split ratios must be positive, got {ratios:?}"
        )));
    }
    if (r_train + r_dev + r_test - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "split ratios must sum to 1, got {}",
            r_train + r_dev + r_test
        )));
    }
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let n = ids.len() as f64;
    // The epsilon absorbs representation error such as 3000 * 0.05.
    let n_dev = (n * r_dev + 1e-9).floor() as usize;
    let n_test = (n * r_test + 1e-9).floor() as usize;
    let n_train = ids.len() - n_dev - n_test;

    let test = shuffled.split_off(n_train + n_dev);
    let dev = shuffled.split_off(n_train);
    Ok(SplitAssignment {
        train: shuffled,
        dev,
        test,
        seed,
    })
}

/// Parses `"0.75,0.05,0.20"` into a ratio triple.
pub fn parse_ratios(s: &str) -> Result<(f64, f64, f64)> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::InvalidInput(format!("bad split `{s}`: {e}")))?;
    match parts.as_slice() {
        [a, b, c] => Ok((*a, *b, *c)),
        _ => Err(Error::InvalidInput(format!(
            "split `{s}` must have three comma-separated ratios"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn park_positive() -> Viewpoint {
        Viewpoint {
            place_description: "A nearby park".into(),
            reason: "I feel safe here when others are around. There's a good sense of community."
                .into(),
            suggestions:
                "There's no fences, gates, no visitor check, and it's extremely open. This is good and bad."
                    .into(),
            polarity: Polarity::Positive,
            topic: Topic::Safe,
            demographics: None,
        }
    }

    #[test]
    fn renders_park_example_paragraph() {
        assert_eq!(
            render_view_text(&park_positive()),
            "I am writing about this place: A nearby park. I feel safe here because I feel safe \
             here when others are around. There's a good sense of community. Some ways this place \
             could be modified to be safer are: There's no fences, gates, no visitor check, and \
             it's extremely open. This is good and bad."
        );
    }

    #[test]
    fn renders_single_word_fields() {
        let v = Viewpoint {
            place_description: "Library".into(),
            reason: "quiet".into(),
            suggestions: "benches".into(),
            polarity: Polarity::Negative,
            topic: Topic::Welcome,
            demographics: None,
        };
        assert_eq!(
            render_view_text(&v),
            "I am writing about this place: Library. I feel excluded by others for who I am in \
             this location because quiet. Some ways this place could be modified to be less \
             excluding and more welcoming are: benches"
        );
        assert_eq!(render_view_text(&v), render_view_text(&v));
    }

    #[test]
    fn demographics_only_rendered_when_enabled() {
        let mut v = park_positive();
        v.demographics = Some(BTreeMap::from([
            ("gender".to_string(), "female".to_string()),
            ("age".to_string(), "34".to_string()),
        ]));
        assert_eq!(render_view_text_with(&v, false), render_view_text(&v));
        assert!(render_view_text_with(&v, true).ends_with("About me: age: 34, gender: female."));
    }

    #[test]
    fn missing_reason_is_reported_with_line() {
        let good = r#"{"schema_version":1,"pair_id":"p1","topic":"safe","view_a":{"place_description":"d","reason":"r","suggestions":"s"},"view_b":{"place_description":"d","reason":"r","suggestions":"s"}}"#;
        let bad = r#"{"schema_version":1,"pair_id":"p2","topic":"safe","view_a":{"place_description":"d","suggestions":"s"},"view_b":{"place_description":"d","reason":"r","suggestions":"s"}}"#;
        let input = format!("{good}\n{bad}\n");
        let err = parse_view_pairs(input.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        assert!(err.contains("reason"), "{err}");
    }

    #[test]
    fn duplicate_pair_id_rejected() {
        let good = r#"{"schema_version":1,"pair_id":"p1","topic":"welcome","view_a":{"place_description":"d","reason":"r","suggestions":"s"},"view_b":{"place_description":"d","reason":"r","suggestions":"s"}}"#;
        let input = format!("{good}\n{good}\n");
        assert!(matches!(
            parse_view_pairs(input.as_bytes()),
            Err(Error::DuplicatePair(id)) if id == "p1"
        ));
    }

    #[test]
    fn empty_file_gives_no_pairs() {
        assert!(parse_view_pairs(&b""[..]).unwrap().is_empty());
    }

    #[test]
    fn rated_pairs_normalized_by_declared_scale() {
        let input = r#"{"schema_version":1,"text_1":"a","text_2":"b","rating":4}
{"schema_version":1,"text_1":"a","text_2":"c","rating":1}"#;
        let pairs =
            parse_rated_pairs(input.as_bytes(), RatingScale { min: 1.0, max: 5.0 }).unwrap();
        assert_eq!(pairs[0].empathy_rating, 0.75);
        assert_eq!(pairs[1].empathy_rating, 0.0);
        assert!(parse_rated_pairs(input.as_bytes(), RatingScale { min: 0.0, max: 3.0 }).is_err());
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("id{i}")).collect()
    }

    #[test]
    fn split_sizes_follow_floor_rule() {
        let s = split_dataset(&ids(3000), (0.75, 0.05, 0.20), 1).unwrap();
        assert_eq!((s.train.len(), s.dev.len(), s.test.len()), (2250, 150, 600));
        let s = split_dataset(&ids(7), (0.75, 0.05, 0.20), 9).unwrap();
        assert_eq!((s.train.len(), s.dev.len(), s.test.len()), (6, 0, 1));
    }

    #[test]
    fn split_is_deterministic() {
        let a = split_dataset(&ids(100), (0.75, 0.05, 0.20), 42).unwrap();
        let b = split_dataset(&ids(100), (0.75, 0.05, 0.20), 42).unwrap();
        assert_eq!(a, b);
        let c = split_dataset(&ids(100), (0.75, 0.05, 0.20), 43).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn split_rejects_bad_ratios() {
        assert!(split_dataset(&ids(10), (0.7, 0.05, 0.2), 0).is_err());
        assert!(split_dataset(&ids(10), (1.0, 0.0, 0.0), 0).is_err());
        assert_eq!(parse_ratios("0.75,0.05,0.20").unwrap(), (0.75, 0.05, 0.20));
        assert!(parse_ratios("0.5,0.5").is_err());
    }

    proptest! {
        #[test]
        fn split_partitions_input(n in 0usize..400, seed in any::<u64>(), a in 1u32..20, b in 1u32..20, c in 1u32..20) {
            let total = (a + b + c) as f64;
            let ratios = (a as f64 / total, b as f64 / total, 1.0 - a as f64 / total - b as f64 / total);
            let input = ids(n);
            let s = split_dataset(&input, ratios, seed).unwrap();
            let mut all: Vec<String> = s.train.iter().chain(&s.dev).chain(&s.test).cloned().collect();
            prop_assert_eq!(all.len(), n);
            all.sort();
            all.dedup();
            prop_assert_eq!(all.len(), n);
        }

        #[test]
        fn render_is_injective(
            d1 in "[a-z]{1,8}( [a-z]{1,8}){0,3}", r1 in "[a-z]{1,8}( [a-z]{1,8}){0,3}", s1 in "[a-z]{1,8}( [a-z]{1,8}){0,3}",
            d2 in "[a-z]{1,8}( [a-z]{1,8}){0,3}", r2 in "[a-z]{1,8}( [a-z]{1,8}){0,3}", s2 in "[a-z]{1,8}( [a-z]{1,8}){0,3}",
        ) {
            let mk = |d: &str, r: &str, s: &str| Viewpoint {
                place_description: d.into(), reason: r.into(), suggestions: s.into(),
                polarity: Polarity::Positive, topic: Topic::Safe, demographics: None,
            };
            let same = (d1.as_str(), r1.as_str(), s1.as_str()) == (d2.as_str(), r2.as_str(), s2.as_str());
            prop_assert_eq!(same, render_view_text(&mk(&d1, &r1, &s1)) == render_view_text(&mk(&d2, &r2, &s2)));
        }
    }
}
