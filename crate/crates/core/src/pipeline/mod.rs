//! Staged, reproducible runs driven by one config file. Every stage writes
//! its artifacts plus a manifest recording the config and file hashes it
//! consumed, so any artifact can be traced back to its inputs and seeds.

mod config;

pub use config::{
    BackendConfig, BackendKind, GenerateConfig, PathsConfig, RunConfig, ScorerConfig, ScorerKind,
    SelectConfig, SimulateConfig, StudyConfig, CONFIG_VERSION,
};

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{
    Counting, LlmBackend, MessagesApiBackend, RetryPolicy, Retrying, SamplingConfig,
};
use crate::compromise::{Compromise, CompromiseEngine, MockBackend};
use crate::corpus::{load_view_pairs, ViewPair};
use crate::error::{Error, Result};
use crate::scorer::{
    load_checkpoint, score_compromise, EmbeddingModel, EmpathyScorer, HashEncoder, RemoteEncoder,
    DEFAULT_REMOTE_DIM, DEFAULT_REMOTE_MODEL,
};
use crate::selection::{
    candidate_pool, select_candidates, strategy_distribution, write_selected_csv,
};
use crate::study::{
    analyze, build_assignment, derive_preferences, read_ratings_log, simulate_ratings,
    write_ratings_log, StudyPlan,
};

pub const DEFAULT_HASH_DIM: usize = 4096;

pub const POOL_FILE: &str = "pool.jsonl";
pub const SCORED_FILE: &str = "scored.jsonl";
pub const SELECTED_CSV: &str = "selected.csv";
pub const SELECTED_FILE: &str = "selected.jsonl";
pub const DISTRIBUTION_FILE: &str = "strategy_distribution.tsv";
pub const PLAN_FILE: &str = "plan.json";
pub const RATINGS_FILE: &str = "ratings.jsonl";
pub const PREFERENCES_TSV: &str = "preferences.tsv";
pub const PREFERENCES_FILE: &str = "preferences.json";
pub const STATS_TSV: &str = "stats.tsv";
pub const STATS_FILE: &str = "stats.json";
pub const MANIFEST_DIR: &str = "manifests";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Generate,
    Score,
    Select,
    Plan,
    SimulateRatings,
    Report,
    Stats,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Generate,
        Stage::Score,
        Stage::Select,
        Stage::Plan,
        Stage::SimulateRatings,
        Stage::Report,
        Stage::Stats,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Score => "score",
            Stage::Select => "select",
            Stage::Plan => "plan",
            Stage::SimulateRatings => "simulate-ratings",
            Stage::Report => "report",
            Stage::Stats => "stats",
        }
    }

    /// Stages whose manifests must exist before this one runs.
    pub fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::Generate => &[],
            Stage::Score => &[Stage::Generate],
            Stage::Select => &[Stage::Score],
            Stage::Plan => &[Stage::Score, Stage::Select],
            Stage::SimulateRatings => &[Stage::Plan],
            Stage::Report => &[Stage::Plan],
            Stage::Stats => &[Stage::Report],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Stage::ALL.iter().map(|s| s.as_str()).collect();
                Error::InvalidInput(format!(
                    "unknown stage `{s}`; expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

/// What a stage consumed and produced. Contains no timestamps or absolute
/// paths, so identical runs produce identical manifests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub tool_version: String,
    pub config_sha256: String,
    pub seeds: BTreeMap<String, u64>,
    /// File name to sha256 of every input artifact.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    /// Upstream stage name to sha256 of its manifest file.
    pub upstream: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Record {
            line: i + 1,
            message: format!("{}: {e}", path.display()),
        })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut s = String::new();
    for it in items {
        s.push_str(&serde_json::to_string(it)?);
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, content: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, content).map_err(|e| Error::io(path, e))
}

pub fn build_scorer(cfg: &ScorerConfig) -> Result<Box<dyn EmpathyScorer>> {
    Ok(match cfg.kind {
        ScorerKind::Hash => Box::new(EmbeddingModel::new(HashEncoder::new(
            cfg.dim.unwrap_or(DEFAULT_HASH_DIM),
        ))),
        ScorerKind::Checkpoint => {
            let dir = cfg
                .checkpoint
                .as_ref()
                .ok_or_else(|| Error::Config(vec!["scorer.checkpoint: missing".into()]))?;
            Box::new(load_checkpoint(dir)?.0)
        }
        ScorerKind::Remote => {
            let url = cfg
                .url
                .as_deref()
                .ok_or_else(|| Error::Config(vec!["scorer.url: missing".into()]))?;
            Box::new(EmbeddingModel::new(RemoteEncoder::new(
                url,
                cfg.model.as_deref().unwrap_or(DEFAULT_REMOTE_MODEL),
                cfg.dim.unwrap_or(DEFAULT_REMOTE_DIM),
            )?))
        }
    })
}

/// Builds the configured backend. Remote calls are retried and, when
/// `audit_log` is given, recorded there.
pub fn build_backend(cfg: &BackendConfig, audit_log: Option<&Path>) -> Result<Box<dyn LlmBackend>> {
    Ok(match cfg.kind {
        BackendKind::Mock => Box::new(Counting::new(MockBackend::new(), cfg.request_budget)),
        BackendKind::MessagesApi => {
            let api = MessagesApiBackend::from_env(cfg.base_url.as_deref(), cfg.model.as_deref())?;
            let mut retrying = Retrying::new(
                api,
                RetryPolicy {
                    max_retries: cfg.max_retries,
                    ..RetryPolicy::default()
                },
            );
            if let Some(p) = audit_log {
                retrying = retrying.with_audit_log(p)?;
            }
            Box::new(Counting::new(retrying, cfg.request_budget))
        }
    })
}

pub struct Pipeline {
    cfg: RunConfig,
    backend: Option<Box<dyn LlmBackend>>,
    scorer: Option<Box<dyn EmpathyScorer>>,
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> Self {
        Pipeline {
            cfg,
            backend: None,
            scorer: None,
        }
    }

    /// Uses `backend` instead of the one named in the config.
    pub fn with_backend(mut self, backend: Box<dyn LlmBackend>) -> Self {
        self.backend = Some(backend);
        self
    }

    pub fn with_scorer(mut self, scorer: Box<dyn EmpathyScorer>) -> Self {
        self.scorer = Some(scorer);
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    fn out(&self, name: &str) -> PathBuf {
        self.cfg.paths.out_dir.join(name)
    }

    pub fn manifest_path(&self, stage: Stage) -> PathBuf {
        self.cfg
            .paths
            .out_dir
            .join(MANIFEST_DIR)
            .join(format!("{stage}.json"))
    }

    pub fn load_manifest(&self, stage: Stage) -> Result<Option<StageManifest>> {
        let p = self.manifest_path(stage);
        if !p.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        Ok(Some(serde_json::from_str(&text)?))
    }

    fn scorer(&mut self) -> Result<&dyn EmpathyScorer> {
        if self.scorer.is_none() {
            self.scorer = Some(build_scorer(&self.cfg.scorer)?);
        }
        Ok(self.scorer.as_deref().expect("set above"))
    }

    fn pairs(&self) -> Result<Vec<ViewPair>> {
        load_view_pairs(&self.cfg.paths.pairs)
    }

    /// Confirms every upstream stage ran and its outputs are unchanged.
    /// Returns upstream manifest hashes.
    fn check_upstream(&self, stage: Stage) -> Result<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        for &up in stage.upstream() {
            let path = self.manifest_path(up);
            let Some(m) = self.load_manifest(up)? else {
                return Err(Error::MissingUpstream {
                    stage: stage.to_string(),
                    missing: up.to_string(),
                });
            };
            for (file, hash) in &m.outputs {
                let p = self.out(file);
                if !p.exists() || &sha256_file(&p)? != hash {
                    return Err(Error::InvalidInput(format!(
                        "`{file}` changed since stage `{up}` ran; re-run `{up}` before `{stage}`"
                    )));
                }
            }
            out.insert(up.to_string(), sha256_file(&path)?);
        }
        Ok(out)
    }

    /// Config values a stage depends on, hashed into its manifest. Paths are
    /// left out so that runs in different directories compare equal.
    fn stage_config(&self, stage: Stage) -> serde_json::Value {
        let c = &self.cfg;
        let v = match stage {
            Stage::Generate => serde_json::json!({
                "backend": c.backend, "scorer": c.scorer, "generate": c.generate
            }),
            Stage::Score => serde_json::json!({ "scorer": c.scorer }),
            Stage::Select => serde_json::json!({ "n": c.generate.n, "select": c.select }),
            Stage::Plan => serde_json::json!({ "study": c.study }),
            Stage::SimulateRatings => serde_json::json!({ "simulate": c.simulate }),
            Stage::Report => {
                serde_json::json!({ "exclude_incomplete": c.stats.exclude_incomplete })
            }
            Stage::Stats => serde_json::json!({ "stats": c.stats }),
        };
        let mut v = v;
        if let Some(s) = v.get_mut("scorer").and_then(|s| s.as_object_mut()) {
            s.remove("checkpoint");
        }
        v
    }

    fn seeds(&self, stage: Stage) -> BTreeMap<String, u64> {
        let c = &self.cfg;
        let seed = match stage {
            Stage::Generate => Some(c.generate.seed),
            Stage::Plan => Some(c.study.seed),
            Stage::SimulateRatings => Some(c.simulate.seed),
            Stage::Stats => Some(c.stats.seed),
            Stage::Score | Stage::Select | Stage::Report => None,
        };
        seed.map(|s| BTreeMap::from([(stage.to_string(), s)]))
            .unwrap_or_default()
    }

    fn hashes(&self, names: &[&str]) -> Result<BTreeMap<String, String>> {
        names
            .iter()
            .map(|n| Ok((n.to_string(), sha256_file(&self.out(n))?)))
            .collect()
    }

    pub fn run_stage(&mut self, stage: Stage) -> Result<StageManifest> {
        let upstream = self.check_upstream(stage)?;
        let dir = self.cfg.paths.out_dir.clone();
        fs::create_dir_all(dir.join(MANIFEST_DIR)).map_err(|e| Error::io(&dir, e))?;
        log::info!("running stage {stage}");

        let mut inputs = BTreeMap::new();
        let mut warnings = Vec::new();
        let outputs: Vec<&str> = match stage {
            Stage::Generate => {
                let pairs_path = self.cfg.paths.pairs.clone();
                inputs.insert("pairs".to_string(), sha256_file(&pairs_path)?);
                let pairs = self.pairs()?;
                if self.backend.is_none() {
                    self.backend = Some(build_backend(
                        &self.cfg.backend,
                        Some(&self.out("llm_audit.jsonl")),
                    )?);
                }
                self.scorer()?;
                let g = &self.cfg.generate;
                let sampling = SamplingConfig {
                    temperature: self.cfg.backend.temperature,
                    seed: g.seed,
                    max_tokens: self.cfg.backend.max_tokens,
                };
                let engine =
                    CompromiseEngine::new(self.backend.as_deref().expect("set above"), sampling)
                        .with_demographics(g.include_demographics);
                let pool = engine.generate_pool(
                    &pairs,
                    &g.strategies,
                    g.n,
                    self.scorer.as_deref().expect("set above"),
                    g.feedback,
                    g.in_flight,
                )?;
                write_jsonl(&self.out(POOL_FILE), &pool)?;
                vec![POOL_FILE]
            }
            Stage::Score => {
                inputs.insert("pairs".to_string(), sha256_file(&self.cfg.paths.pairs)?);
                inputs.insert(POOL_FILE.to_string(), sha256_file(&self.out(POOL_FILE))?);
                let pairs: BTreeMap<String, ViewPair> = self
                    .pairs()?
                    .into_iter()
                    .map(|p| (p.pair_id.clone(), p))
                    .collect();
                let pool: Vec<Compromise> = read_jsonl(&self.out(POOL_FILE))?;
                let scorer = self.scorer()?;
                let scored: Vec<Compromise> = pool
                    .into_par_iter()
                    .map(|mut c| {
                        if c.scores.is_none() {
                            let pair = pairs.get(&c.pair_id).ok_or_else(|| {
                                Error::InvalidInput(format!(
                                    "compromise for unknown pair `{}`",
                                    c.pair_id
                                ))
                            })?;
                            c.scores = Some(score_compromise(scorer, &c.text, pair)?);
                        }
                        Ok(c)
                    })
                    .collect::<Result<_>>()?;
                write_jsonl(&self.out(SCORED_FILE), &scored)?;
                vec![SCORED_FILE]
            }
            Stage::Select => {
                inputs.insert("pairs".to_string(), sha256_file(&self.cfg.paths.pairs)?);
                inputs.insert(
                    SCORED_FILE.to_string(),
                    sha256_file(&self.out(SCORED_FILE))?,
                );
                let scored: Vec<Compromise> = read_jsonl(&self.out(SCORED_FILE))?;
                let candidates = candidate_pool(&scored, self.cfg.generate.n)?;
                let selected = select_candidates(&candidates, self.cfg.select.k)?;
                write_jsonl(&self.out(SELECTED_FILE), &selected)?;
                let mut csv = Vec::new();
                write_selected_csv(&selected, &mut csv)?;
                write_file(&self.out(SELECTED_CSV), csv)?;
                let topics = self
                    .pairs()?
                    .into_iter()
                    .map(|p| (p.pair_id, p.topic))
                    .collect();
                let mut tsv = Vec::new();
                strategy_distribution(&selected, &topics)?
                    .write_tsv(&mut tsv)
                    .map_err(|e| Error::io(self.out(DISTRIBUTION_FILE), e))?;
                write_file(&self.out(DISTRIBUTION_FILE), tsv)?;
                vec![SELECTED_FILE, SELECTED_CSV, DISTRIBUTION_FILE]
            }
            Stage::Plan => {
                inputs.insert("pairs".to_string(), sha256_file(&self.cfg.paths.pairs)?);
                inputs.insert(
                    SCORED_FILE.to_string(),
                    sha256_file(&self.out(SCORED_FILE))?,
                );
                let scored: Vec<Compromise> = read_jsonl(&self.out(SCORED_FILE))?;
                let s = &self.cfg.study;
                let (plan, warn) =
                    build_assignment(&s.rater_ids(), &self.pairs()?, &scored, &s.plan, s.seed)?;
                warnings = warn
                    .into_iter()
                    .map(|p| format!("pair {p} excluded: too few candidates"))
                    .collect();
                write_file(
                    &self.out(PLAN_FILE),
                    serde_json::to_string_pretty(&plan)? + "\n",
                )?;
                vec![PLAN_FILE]
            }
            Stage::SimulateRatings => {
                inputs.insert(PLAN_FILE.to_string(), sha256_file(&self.out(PLAN_FILE))?);
                let plan = self.load_plan()?;
                let ratings =
                    simulate_ratings(&plan, self.cfg.simulate.seed, &self.cfg.simulate.favoured);
                write_ratings_log(self.out(RATINGS_FILE), &ratings)?;
                vec![RATINGS_FILE]
            }
            Stage::Report => {
                let ratings_path = self.out(RATINGS_FILE);
                if !ratings_path.exists() {
                    return Err(Error::MissingUpstream {
                        stage: stage.to_string(),
                        missing: Stage::SimulateRatings.to_string(),
                    });
                }
                inputs.insert(PLAN_FILE.to_string(), sha256_file(&self.out(PLAN_FILE))?);
                inputs.insert(RATINGS_FILE.to_string(), sha256_file(&ratings_path)?);
                let plan = self.load_plan()?;
                let ratings = read_ratings_log(&ratings_path, &plan)?;
                let table = derive_preferences(&plan, &ratings, self.cfg.stats.exclude_incomplete)?;
                write_file(&self.out(PREFERENCES_TSV), table.to_tsv())?;
                write_file(
                    &self.out(PREFERENCES_FILE),
                    serde_json::to_string_pretty(&table)? + "\n",
                )?;
                vec![PREFERENCES_TSV, PREFERENCES_FILE]
            }
            Stage::Stats => {
                inputs.insert(PLAN_FILE.to_string(), sha256_file(&self.out(PLAN_FILE))?);
                inputs.insert(
                    RATINGS_FILE.to_string(),
                    sha256_file(&self.out(RATINGS_FILE))?,
                );
                let plan = self.load_plan()?;
                let ratings = read_ratings_log(self.out(RATINGS_FILE), &plan)?;
                let analysis = analyze(&plan, &ratings, &self.cfg.stats)?;
                write_file(&self.out(STATS_TSV), analysis.to_tsv())?;
                write_file(
                    &self.out(STATS_FILE),
                    serde_json::to_string_pretty(&analysis)? + "\n",
                )?;
                vec![STATS_TSV, STATS_FILE]
            }
        };

        let manifest = StageManifest {
            stage: stage.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: sha256_hex(self.stage_config(stage).to_string().as_bytes()),
            seeds: self.seeds(stage),
            inputs,
            outputs: self.hashes(&outputs)?,
            upstream,
            warnings,
        };
        write_file(
            &self.manifest_path(stage),
            serde_json::to_string_pretty(&manifest)? + "\n",
        )?;
        Ok(manifest)
    }

    pub fn load_plan(&self) -> Result<StudyPlan> {
        let p = self.out(PLAN_FILE);
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Runs every stage in order.
    pub fn run_all(&mut self) -> Result<Vec<StageManifest>> {
        Stage::ALL.into_iter().map(|s| self.run_stage(s)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.as_str().parse::<Stage>().unwrap(), s);
        }
        let e = "selct".parse::<Stage>().unwrap_err().to_string();
        assert!(e.contains("simulate-ratings"));
    }

    #[test]
    fn every_upstream_precedes_its_stage() {
        for s in Stage::ALL {
            assert!(s.upstream().iter().all(|u| *u < s));
        }
    }

    #[test]
    fn sha256_known_value() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn select_before_generate_is_a_dependency_error() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!(
            "[paths]\npairs = \"x.jsonl\"\nout_dir = {:?}\n[generate]\nseed = 1\n[study]\nseed = 1\n[simulate]\nseed = 1\n[stats]\nseed = 1\n",
            dir.path()
        );
        let mut p = Pipeline::new(RunConfig::parse(&text).unwrap());
        match p.run_stage(Stage::Select) {
            Err(Error::MissingUpstream { stage, missing }) => {
                assert_eq!((stage.as_str(), missing.as_str()), ("select", "score"))
            }
            other => panic!("{other:?}"),
        }
    }
}
