//! Parsers for the labelled response formats requested by the prompts.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::prompts::{LABEL_SIMILARITIES, LABEL_SUGGESTIONS_A, LABEL_SUGGESTIONS_B};

/// Strips list bullets and markdown emphasis that models put before labels.
fn strip_decoration(line: &str) -> &str {
    line.trim_start()
        .trim_start_matches(['-', '*', '#', '>'])
        .trim_start()
        .trim_start_matches("**")
}

/// If `line` starts with `<word> <k>:` returns `(k, rest)`.
fn numbered_marker<'a>(line: &'a str, word: &str) -> Option<(usize, &'a str)> {
    let rest = strip_decoration(line)
        .strip_prefix(word)?
        .strip_prefix(' ')?;
    let digits_end = rest.find(|c: char| !c.is_ascii_digit())?;
    if digits_end == 0 {
        return None;
    }
    let k: usize = rest[..digits_end].parse().ok()?;
    let after = rest[digits_end..].trim_start_matches("**");
    let after = after.strip_prefix(':')?.trim_start_matches("**");
    Some((k, after.trim()))
}

fn is_any_marker(line: &str) -> bool {
    numbered_marker(line, "Response").is_some() || numbered_marker(line, "Score").is_some()
}

/// Extracts the texts following `Response 1:` .. `Response n:`.
///
/// A response runs until the next marker or a blank line. Markers may
/// appear in any order; the first occurrence of each index wins, and
/// indices above `n` are ignored.
pub fn parse_llm_response(text: &str, n: usize) -> Result<Vec<String>> {
    if n == 0 {
        return Err(Error::InvalidInput("n must be at least 1".into()));
    }
    let mut found: BTreeMap<usize, String> = BTreeMap::new();
    let lines: Vec<&str> = text.lines().collect();
    let mut i = 0;
    while i < lines.len() {
        if let Some((k, first)) = numbered_marker(lines[i], "Response") {
            let mut body = vec![first.to_string()];
            i += 1;
            while i < lines.len() && !is_any_marker(lines[i]) {
                let l = lines[i].trim();
                if l.is_empty() {
                    if body.iter().any(|b| !b.is_empty()) {
                        break;
                    }
                } else {
                    body.push(l.to_string());
                }
                i += 1;
            }
            let joined = body
                .into_iter()
                .filter(|b| !b.is_empty())
                .collect::<Vec<_>>()
                .join(" ");
            if (1..=n).contains(&k) && !joined.is_empty() {
                found.entry(k).or_insert(joined);
            }
        } else {
            i += 1;
        }
    }
    (1..=n)
        .map(|k| {
            found.remove(&k).ok_or_else(|| Error::Parse {
                message: format!("missing response {k}"),
                raw: text.to_string(),
            })
        })
        .collect()
}

/// Parses `Score k: a, b` lines into `n` pairs, clamping each value to
/// `[-1, 1]` with a warning.
pub fn parse_self_scores(text: &str, n: usize) -> Result<Vec<(f64, f64)>> {
    let mut found: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    for line in text.lines() {
        let Some((k, rest)) = numbered_marker(line, "Score") else {
            continue;
        };
        let nums: Vec<f64> = rest
            .split([',', ';', ' ', '/'])
            .filter_map(|t| t.trim().trim_end_matches('.').parse::<f64>().ok())
            .collect();
        if nums.len() < 2 {
            return Err(Error::Parse {
                message: format!("score {k} does not contain two numbers"),
                raw: text.to_string(),
            });
        }
        let clamp = |x: f64| {
            if !(-1.0..=1.0).contains(&x) {
                log::warn!("self-evaluation score {x} for compromise {k} clamped to [-1, 1]");
            }
            x.clamp(-1.0, 1.0)
        };
        found.entry(k).or_insert((clamp(nums[0]), clamp(nums[1])));
    }
    (1..=n)
        .map(|k| {
            found.remove(&k).ok_or_else(|| Error::Parse {
                message: format!("missing score {k}"),
                raw: text.to_string(),
            })
        })
        .collect()
}

/// Extracts the three labelled decomposition sections.
pub fn parse_decomposition(text: &str) -> Result<(String, String, String)> {
    let labels = [LABEL_SUGGESTIONS_A, LABEL_SUGGESTIONS_B, LABEL_SIMILARITIES];
    let mut sections: [Option<Vec<String>>; 3] = [None, None, None];
    let mut current: Option<usize> = None;
    for line in text.lines() {
        let stripped = strip_decoration(line);
        if let Some(idx) = labels.iter().position(|l| stripped.starts_with(l)) {
            let rest = stripped[labels[idx].len()..]
                .trim_start_matches("**")
                .trim();
            current = Some(idx);
            if sections[idx].is_none() {
                sections[idx] = Some(vec![rest.to_string()]);
            } else {
                current = None;
            }
        } else if let Some(idx) = current {
            let l = line.trim();
            if !l.is_empty() {
                sections[idx]
                    .as_mut()
                    .expect("section opened")
                    .push(l.to_string());
            }
        }
    }
    let mut out = Vec::with_capacity(3);
    for (idx, s) in sections.into_iter().enumerate() {
        let joined = s
            .map(|parts| {
                parts
                    .into_iter()
                    .filter(|p| !p.is_empty())
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .unwrap_or_default();
        if joined.is_empty() {
            return Err(Error::Parse {
                message: format!("missing or empty section `{}`", labels[idx]),
                raw: text.to_string(),
            });
        }
        out.push(joined);
    }
    let mut it = out.into_iter();
    Ok((it.next().unwrap(), it.next().unwrap(), it.next().unwrap()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const CANONICAL: &str = "Positive view: a park\nNegative view: another park\n\
Response 1: Create fenced off-leash areas.\n\
Response 2: Add signage about leash laws.\n\
Response 3: Host community dog-owner events.\n\
Response 4: Increase ranger patrols.\n";

    #[test]
    fn parses_canonical_block() {
        let r = parse_llm_response(CANONICAL, 4).unwrap();
        assert_eq!(r.len(), 4);
        assert_eq!(r[0], "Create fenced off-leash areas.");
        assert_eq!(r[3], "Increase ranger patrols.");
    }

    #[test]
    fn reorders_markers_and_tolerates_prose() {
        let text = "Sure! Here are my ideas.\n\n\
**Response 2:** second idea\n\n\
- Response 1: first idea\ncontinues here\n\n\
Response 3: third idea\n\nHope this helps.";
        let r = parse_llm_response(text, 3).unwrap();
        assert_eq!(
            r,
            vec!["first idea continues here", "second idea", "third idea"]
        );
    }

    #[test]
    fn missing_marker_is_named() {
        let text = "Response 1: a\nResponse 3: c\nResponse 4: d";
        let err = parse_llm_response(text, 4).unwrap_err();
        assert!(err.to_string().contains("missing response 2"), "{err}");
        assert!(
            err.to_string().contains("Response 3: c"),
            "raw text attached"
        );
    }

    #[test]
    fn three_responses_for_four_requested() {
        let text = "Response 1: a\nResponse 2: b\nResponse 3: c";
        assert!(parse_llm_response(text, 4)
            .unwrap_err()
            .to_string()
            .contains("missing response 4"));
        assert_eq!(parse_llm_response(text, 1).unwrap(), vec!["a"]);
    }

    #[test]
    fn scores_parsed_and_clamped() {
        let s = parse_self_scores("Score 1: 0.8, 0.6\nScore 2: 1.4, -3\n", 2).unwrap();
        assert_eq!(s, vec![(0.8, 0.6), (1.0, -1.0)]);
        assert!(parse_self_scores("Score 1: 0.8\n", 1).is_err());
        assert!(parse_self_scores("Score 1: 0.8, 0.1\n", 2).is_err());
    }

    #[test]
    fn decomposition_sections() {
        let text = "Here you go:\nSuggestions A: keep it open\nSuggestions B: leash laws,\nfines\nSimilarities: safety for all\n";
        let (a, b, s) = parse_decomposition(text).unwrap();
        assert_eq!(a, "keep it open");
        assert_eq!(b, "leash laws, fines");
        assert_eq!(s, "safety for all");
        assert!(parse_decomposition("Suggestions A: x\nSimilarities: y").is_err());
    }
}
