//! Run configuration: a single TOML file, checked in one pass so that every
//! problem is reported together.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use toml::{Table, Value};

use crate::align::{AlignConfig, LossKind, DEFAULT_LR, DEFAULT_MARGIN, DEFAULT_TRAINABLE_LAYERS};
use crate::compromise::{FeedbackConfig, Strategy, DEFAULT_N};
use crate::error::{Error, Result};
use crate::selection::DEFAULT_K;
use crate::stats::DEFAULT_ITERATIONS;
use crate::study::{
    MethodLabel, PairAssignment, PlanConfig, RaterAggregate, StudyAnalysisConfig, ITEMS_PER_RATER,
};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Mock,
    MessagesApi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    Hash,
    Checkpoint,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathsConfig {
    pub pairs: PathBuf,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub model: Option<String>,
    pub base_url: Option<String>,
    pub temperature: f64,
    pub max_tokens: usize,
    pub max_retries: usize,
    pub request_budget: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScorerConfig {
    pub kind: ScorerKind,
    /// Embedding width; defaults depend on `kind`.
    pub dim: Option<usize>,
    pub checkpoint: Option<PathBuf>,
    pub url: Option<String>,
    pub model: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerateConfig {
    pub seed: u64,
    pub n: usize,
    pub strategies: Vec<Strategy>,
    pub feedback: FeedbackConfig,
    pub in_flight: usize,
    pub include_demographics: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectConfig {
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyConfig {
    pub seed: u64,
    pub raters: usize,
    pub plan: PlanConfig,
}

impl StudyConfig {
    pub fn rater_ids(&self) -> Vec<String> {
        (1..=self.raters).map(|i| format!("rater_{i:03}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateConfig {
    pub seed: u64,
    pub favoured: Vec<MethodLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub version: u32,
    pub paths: PathsConfig,
    pub backend: BackendConfig,
    pub scorer: ScorerConfig,
    pub generate: GenerateConfig,
    pub select: SelectConfig,
    pub study: StudyConfig,
    pub simulate: SimulateConfig,
    pub stats: StudyAnalysisConfig,
    /// Present only when the file has an `[align]` section.
    pub align: Option<AlignConfig>,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        // Relative paths are relative to the config file.
        if let Some(base) = path.parent() {
            for p in [&mut cfg.paths.pairs, &mut cfg.paths.out_dir] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
            if let Some(c) = cfg.scorer.checkpoint.as_mut().filter(|c| c.is_relative()) {
                *c = base.join(&*c);
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let root: Table = text.parse().map_err(|e: toml::de::Error| {
            Error::Config(vec![format!("not valid TOML: {}", e.message())])
        })?;
        let mut errors = Vec::new();
        let cfg = {
            let mut top = Section::new("", Some(&root), &mut errors);
            let version = top.or("version", CONFIG_VERSION as u64) as u32;
            for s in [
                "paths", "backend", "scorer", "generate", "select", "study", "simulate", "stats",
                "align",
            ] {
                top.allow_table(s);
            }
            top.finish();
            if version != CONFIG_VERSION {
                errors.push(format!(
                    "version: unsupported config version {version}; expected {CONFIG_VERSION}"
                ));
            }
            let sub = |name: &str| -> Option<&Table> { root.get(name).and_then(Value::as_table) };

            let mut s = Section::new("paths", sub("paths"), &mut errors);
            let paths = PathsConfig {
                pairs: s.required::<String>("pairs").unwrap_or_default().into(),
                out_dir: s.required::<String>("out_dir").unwrap_or_default().into(),
            };
            s.finish();

            let mut s = Section::new("backend", sub("backend"), &mut errors);
            let backend = BackendConfig {
                kind: s.choice(
                    "kind",
                    BackendKind::Mock,
                    &[
                        ("mock", BackendKind::Mock),
                        ("messages_api", BackendKind::MessagesApi),
                    ],
                ),
                model: s.opt("model"),
                base_url: s.opt("base_url"),
                temperature: s.or("temperature", 1.0),
                max_tokens: s.or("max_tokens", 2048u64) as usize,
                max_retries: s.or("max_retries", 3u64) as usize,
                request_budget: s.opt::<u64>("request_budget").map(|v| v as usize),
            };
            s.finish();

            let mut s = Section::new("scorer", sub("scorer"), &mut errors);
            let scorer = ScorerConfig {
                kind: s.choice(
                    "kind",
                    ScorerKind::Hash,
                    &[
                        ("hash", ScorerKind::Hash),
                        ("checkpoint", ScorerKind::Checkpoint),
                        ("remote", ScorerKind::Remote),
                    ],
                ),
                dim: s.opt::<u64>("dim").map(|v| v as usize),
                checkpoint: s.opt::<String>("checkpoint").map(PathBuf::from),
                url: s.opt("url"),
                model: s.opt("model"),
            };
            match scorer.kind {
                ScorerKind::Checkpoint if scorer.checkpoint.is_none() => {
                    s.error("checkpoint", "required when kind = \"checkpoint\"")
                }
                ScorerKind::Remote if scorer.url.is_none() => {
                    s.error("url", "required when kind = \"remote\"")
                }
                _ => {}
            }
            s.finish();

            let mut s = Section::new("generate", sub("generate"), &mut errors);
            let generate = GenerateConfig {
                seed: s.seed(),
                n: s.positive("n", DEFAULT_N),
                strategies: s.enum_list("strategies", &Strategy::ALL),
                feedback: FeedbackConfig {
                    max_iters: s.positive(
                        "feedback_max_iters",
                        FeedbackConfig::default().max_iters as usize,
                    ) as u32,
                    stop_epsilon: s.or("feedback_epsilon", FeedbackConfig::default().stop_epsilon),
                },
                in_flight: s.positive("in_flight", 4),
                include_demographics: s.or("include_demographics", false),
            };
            s.finish();

            let mut s = Section::new("select", sub("select"), &mut errors);
            let select = SelectConfig {
                k: s.positive("k", DEFAULT_K),
            };
            s.finish();

            let mut s = Section::new("study", sub("study"), &mut errors);
            let study = StudyConfig {
                seed: s.seed(),
                raters: s.positive("raters", 50),
                plan: PlanConfig {
                    items_per_rater: s.positive("items_per_rater", ITEMS_PER_RATER),
                    assignment: s.choice(
                        "assignment",
                        PairAssignment::Sequential,
                        &[
                            ("sequential", PairAssignment::Sequential),
                            ("random", PairAssignment::Random),
                        ],
                    ),
                    feedback_n: s.positive("feedback_n", DEFAULT_N),
                    num_pairs: s.opt::<u64>("num_pairs").map(|v| v as usize),
                },
            };
            s.finish();

            let mut s = Section::new("simulate", sub("simulate"), &mut errors);
            let simulate = SimulateConfig {
                seed: s.seed(),
                favoured: {
                    let v: Vec<MethodLabel> =
                        s.enum_list("favoured", &[MethodLabel::CotFb1, MethodLabel::CotFb2]);
                    v
                },
            };
            s.finish();

            let mut s = Section::new("stats", sub("stats"), &mut errors);
            let stats = StudyAnalysisConfig {
                seed: s.seed(),
                iterations: s.positive("iterations", DEFAULT_ITERATIONS),
                level: s.or("level", 0.95),
                exclude_incomplete: s.or("exclude_incomplete", true),
                aggregate: s.choice(
                    "aggregate",
                    RaterAggregate::MeanRating,
                    &[
                        ("mean_rating", RaterAggregate::MeanRating),
                        ("first_pref_count", RaterAggregate::FirstPrefCount),
                    ],
                ),
                baseline: s.enum_value("baseline", MethodLabel::SinglePrompt),
            };
            if !(stats.level > 0.0 && stats.level < 1.0) {
                s.error("level", "must lie strictly between 0 and 1");
            }
            s.finish();

            let align = sub("align").map(|t| {
                let mut s = Section::new("align", Some(t), &mut errors);
                let loss = s.choice(
                    "loss",
                    LossKind::Nce,
                    &[("nce", LossKind::Nce), ("task", LossKind::TaskLoss)],
                );
                let mut a = AlignConfig::new(loss);
                a.seed = s.seed();
                a.base_lr = s.or("lr", DEFAULT_LR);
                a.w_margin = s.or("margin", DEFAULT_MARGIN);
                a.epochs = s.positive("epochs", loss.default_epochs());
                a.trainable_layers = s.positive("trainable_layers", DEFAULT_TRAINABLE_LAYERS);
                a.batch_size = s.positive("batch_size", a.batch_size);
                a.warmup_steps = s.opt::<u64>("warmup_steps").map(|v| v as usize);
                a.max_steps = s.opt::<u64>("max_steps").map(|v| v as usize);
                s.finish();
                a
            });

            RunConfig {
                version,
                paths,
                backend,
                scorer,
                generate,
                select,
                study,
                simulate,
                stats,
                align,
            }
        };
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(errors))
        }
    }

    /// The configuration with every default filled, as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}

/// A value that can be read out of a TOML field.
trait FromToml: Sized {
    const EXPECTED: &'static str;
    fn from_toml(v: &Value) -> Option<Self>;
}

impl FromToml for u64 {
    const EXPECTED: &'static str = "a non-negative integer";
    fn from_toml(v: &Value) -> Option<Self> {
        v.as_integer().and_then(|i| u64::try_from(i).ok())
    }
}

impl FromToml for f64 {
    const EXPECTED: &'static str = "a number";
    fn from_toml(v: &Value) -> Option<Self> {
        v.as_float().or_else(|| v.as_integer().map(|i| i as f64))
    }
}

impl FromToml for bool {
    const EXPECTED: &'static str = "a boolean";
    fn from_toml(v: &Value) -> Option<Self> {
        v.as_bool()
    }
}

impl FromToml for String {
    const EXPECTED: &'static str = "a string";
    fn from_toml(v: &Value) -> Option<Self> {
        v.as_str().map(str::to_string)
    }
}

/// Reads one table, recording type errors and remembering which keys were
/// consumed so the rest can be reported as unknown.
struct Section<'a> {
    name: &'static str,
    table: Option<&'a Table>,
    errors: &'a mut Vec<String>,
    seen: BTreeSet<String>,
}

impl<'a> Section<'a> {
    fn new(name: &'static str, table: Option<&'a Table>, errors: &'a mut Vec<String>) -> Self {
        Section {
            name,
            table,
            errors,
            seen: BTreeSet::new(),
        }
    }

    fn path(&self, key: &str) -> String {
        if self.name.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.name)
        }
    }

    fn error(&mut self, key: &str, msg: &str) {
        let p = self.path(key);
        self.errors.push(format!("{p}: {msg}"));
    }

    fn raw(&mut self, key: &str) -> Option<&'a Value> {
        self.seen.insert(key.to_string());
        self.table.and_then(|t| t.get(key))
    }

    fn allow_table(&mut self, key: &str) {
        if let Some(v) = self.raw(key) {
            if !v.is_table() {
                self.error(key, "expected a table");
            }
        }
    }

    fn opt<T: FromToml>(&mut self, key: &str) -> Option<T> {
        let v = self.raw(key)?;
        let parsed = T::from_toml(v);
        if parsed.is_none() {
            self.error(
                key,
                &format!("expected {}, found {}", T::EXPECTED, v.type_str()),
            );
        }
        parsed
    }

    fn or<T: FromToml>(&mut self, key: &str, default: T) -> T {
        self.opt(key).unwrap_or(default)
    }

    fn required<T: FromToml>(&mut self, key: &str) -> Option<T> {
        if self.table.and_then(|t| t.get(key)).is_none() {
            self.seen.insert(key.to_string());
            self.error(key, "missing required value");
            return None;
        }
        self.opt(key)
    }

    fn seed(&mut self) -> u64 {
        if self.table.and_then(|t| t.get("seed")).is_none() {
            self.seen.insert("seed".into());
            self.error(
                "seed",
                "missing seed; every stage seed must be set explicitly",
            );
            return 0;
        }
        self.or("seed", 0)
    }

    fn positive(&mut self, key: &str, default: usize) -> usize {
        let v = self.or(key, default as u64);
        if v == 0 {
            self.error(key, "must be at least 1");
        }
        v as usize
    }

    fn choice<T: Copy>(&mut self, key: &str, default: T, options: &[(&str, T)]) -> T {
        let Some(s) = self.opt::<String>(key) else {
            return default;
        };
        match options.iter().find(|(n, _)| *n == s) {
            Some((_, v)) => *v,
            None => {
                let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                self.error(
                    key,
                    &format!("unknown value `{s}`; expected one of {}", names.join(", ")),
                );
                default
            }
        }
    }

    fn enum_value<T: FromStr<Err = Error> + Copy>(&mut self, key: &str, default: T) -> T {
        let Some(s) = self.opt::<String>(key) else {
            return default;
        };
        match s.parse() {
            Ok(v) => v,
            Err(e) => {
                self.error(key, &enum_message(e));
                default
            }
        }
    }

    fn enum_list<T: FromStr<Err = Error> + Copy>(&mut self, key: &str, default: &[T]) -> Vec<T> {
        let Some(v) = self.raw(key) else {
            return default.to_vec();
        };
        let Some(items) = v.as_array() else {
            self.error(
                key,
                &format!("expected an array of strings, found {}", v.type_str()),
            );
            return default.to_vec();
        };
        let mut out = Vec::new();
        for item in items {
            match item.as_str().map(str::parse::<T>) {
                Some(Ok(x)) => out.push(x),
                Some(Err(e)) => self.error(key, &enum_message(e)),
                None => self.error(key, "expected an array of strings"),
            }
        }
        if items.is_empty() {
            self.error(key, "must not be empty");
        }
        out
    }

    fn finish(self) {
        let Some(t) = self.table else { return };
        for k in t.keys() {
            if !self.seen.contains(k) {
                let p = if self.name.is_empty() {
                    k.clone()
                } else {
                    format!("{}.{k}", self.name)
                };
                self.errors.push(format!("{p}: unknown key"));
            }
        }
    }
}

fn enum_message(e: Error) -> String {
    match e {
        Error::InvalidInput(m) => m,
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[paths]
pairs = "pairs.jsonl"
out_dir = "out"
[generate]
seed = 1
[study]
seed = 2
[simulate]
seed = 3
[stats]
seed = 4
"#;

    fn errors(text: &str) -> Vec<String> {
        match RunConfig::parse(text) {
            Err(Error::Config(e)) => e,
            other => panic!("expected config errors, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(
            (c.generate.n, c.select.k, c.stats.iterations),
            (4, 4, 10_000)
        );
        assert_eq!(c.generate.strategies, Strategy::ALL.to_vec());
        assert_eq!(c.study.plan.items_per_rater, 5);
        assert_eq!(c.backend.kind, BackendKind::Mock);
        assert!(c.align.is_none());
        let echoed = c.to_toml();
        assert!(echoed.contains("k = 4"), "{echoed}");
    }

    #[test]
    fn alignment_hyperparameters_echo() {
        let nce =
            RunConfig::parse(&format!("{MINIMAL}[align]\nseed = 5\nloss = \"nce\"\n")).unwrap();
        let a = nce.align.unwrap();
        assert_eq!((a.base_lr, a.w_margin, a.epochs), (3e-5, 10.0, 8));
        let task = RunConfig::parse(&format!(
            "{MINIMAL}[align]\nseed = 5\nloss = \"task\"\nlr = 3e-5\nmargin = 10\n"
        ))
        .unwrap();
        assert_eq!(task.align.unwrap().epochs, 12);
    }

    #[test]
    fn misspelled_strategy_lists_valid_values() {
        let e = errors(&MINIMAL.replace(
            "seed = 1",
            "seed = 1\nstrategies = [\"cot\", \"cot_feedbak\"]",
        ));
        assert_eq!(e.len(), 1);
        assert!(e[0].starts_with("generate.strategies"), "{e:?}");
        for name in ["single_prompt", "cot_llm", "cot_feedback"] {
            assert!(e[0].contains(name), "{}", e[0]);
        }
    }

    #[test]
    fn problems_are_aggregated() {
        let text = MINIMAL
            .replace("seed = 3\n", "")
            .replace("[stats]", "[stats]\nitertions = 5\nbaseline = \"sp\"");
        let e = errors(&format!("{text}\ncolour = \"blue\"\n[select]\nk = 0\n"));
        let joined = e.join("\n");
        for needle in [
            "simulate.seed: missing seed",
            "stats.itertions: unknown key",
            "stats.baseline",
            "colour: unknown key",
            "select.k: must be at least 1",
        ] {
            assert!(joined.contains(needle), "missing `{needle}` in\n{joined}");
        }
        assert!(joined.contains("opposing_view"));
        assert_eq!(e.len(), 5);
    }

    #[test]
    fn bad_types_and_missing_paths() {
        let e = errors("[generate]\nseed = \"one\"\n");
        let joined = e.join("\n");
        assert!(joined.contains("generate.seed: expected a non-negative integer, found string"));
        assert!(joined.contains("paths.pairs: missing required value"));
        assert!(errors("not = [toml").join("").contains("not valid TOML"));
    }
}
