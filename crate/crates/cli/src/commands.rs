use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;
use serde_json::json;

use compromise_core::align::{
    align, build_alignment_examples, load_tiny_lm, mean_scores, save_tiny_lm, sft, AlignConfig,
    GenerationConfig, LossKind, SftConfig, TinyLm, TinyLmConfig, TrainableLm, Vocab,
};
use compromise_core::corpus::{
    load_rated_pairs, load_view_pairs, parse_ratios, split_dataset, RatingScale,
};
use compromise_core::eval::{
    best_of_k, corpus_rouge, forgetting_loglik, neutrality_report, rouge_metric, RougeKind,
};
use compromise_core::pipeline::{
    read_jsonl, Pipeline, RunConfig, Stage, DEFAULT_HASH_DIM, RATINGS_FILE,
};
use compromise_core::scorer::{
    load_checkpoint, save_checkpoint, spearman, train_scorer, EmbeddingModel, EmpathyScorer,
    HashEncoder, ProjectionEncoder, Provenance, ScorerTrainConfig, ValidationMetric,
};
use compromise_core::stats::{
    bootstrap_ci, permutation_test, wilcoxon_signed_rank, PermutationMode,
};
use compromise_core::study::{
    cells, derive_preferences, first_pref_credits, per_item_ranks, per_rater_differences,
    read_ratings_log, MethodLabel, RaterAggregate, RatingStore, StudyPlan,
};
use compromise_core::{Error, Result};

use crate::{
    AlignArgs, Command, EvalCommand, Format, SftArgs, StageArgs, StatsArgs, StudyCommand, TestKind,
    TrainScorerArgs,
};

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::ValidateConfig { config } => {
            let cfg = RunConfig::load(&config)?;
            print!("{}", cfg.to_toml());
            Ok(())
        }
        Command::Run {
            config,
            stages,
            out_dir,
        } => {
            let mut p = pipeline(&config, out_dir)?;
            if stages.is_empty() {
                p.run_all()?;
            } else {
                for s in &stages {
                    p.run_stage(s.parse()?)?;
                }
            }
            Ok(())
        }
        Command::Generate(a) => run_one(a, Stage::Generate),
        Command::Score(a) => run_one(a, Stage::Score),
        Command::Select(a) => run_one(a, Stage::Select),
        Command::Study { command } => study(command),
        Command::Stats(a) => stats(a),
        Command::TrainScorer(a) => train_scorer_cmd(a),
        Command::Sft(a) => sft_cmd(a),
        Command::Align(a) => align_cmd(a),
        Command::Eval { command } => eval(command),
    }
}

fn pipeline(config: &Path, out_dir: Option<PathBuf>) -> Result<Pipeline> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(d) = out_dir {
        cfg.paths.out_dir = d;
    }
    Ok(Pipeline::new(cfg))
}

fn run_one(a: StageArgs, stage: Stage) -> Result<()> {
    let m = pipeline(&a.config, a.out_dir)?.run_stage(stage)?;
    for w in &m.warnings {
        log::warn!("{w}");
    }
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn write(path: &Path, content: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, content).map_err(|e| Error::io(path, e))
}

/// Non-empty lines of a text file.
fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

fn study(cmd: StudyCommand) -> Result<()> {
    match cmd {
        StudyCommand::Plan(a) => run_one(a, Stage::Plan),
        StudyCommand::Simulate(a) => run_one(a, Stage::SimulateRatings),
        StudyCommand::Serve {
            config,
            out_dir,
            addr,
        } => {
            let p = pipeline(&config, out_dir)?;
            let plan = p.load_plan()?;
            let log_path = p.config().paths.out_dir.join(RATINGS_FILE);
            let store = Arc::new(RatingStore::open(&log_path, plan)?);
            log::info!("appending ratings to {}", log_path.display());
            let rt = tokio::runtime::Runtime::new()
                .map_err(|e| Error::io(Path::new("tokio runtime"), e))?;
            rt.block_on(compromise_server::serve(addr, store))
                .map_err(|e| Error::io(Path::new(&addr.to_string()), e))
        }
        StudyCommand::Report {
            plan,
            ratings,
            include_incomplete,
            format,
        } => {
            let plan: StudyPlan = read_json(&plan)?;
            let ratings = read_ratings_log(&ratings, &plan)?;
            let table = derive_preferences(&plan, &ratings, !include_incomplete)?;
            match format {
                Format::Tsv => print!("{}", table.to_tsv()),
                Format::Json => println!("{}", serde_json::to_string_pretty(&table)?),
            }
            Ok(())
        }
    }
}

fn stats(a: StatsArgs) -> Result<()> {
    let plan: StudyPlan = read_json(&a.plan)?;
    let ratings = read_ratings_log(&a.ratings, &plan)?;
    let method: MethodLabel = a.method.parse()?;
    let baseline: MethodLabel = a.baseline.parse()?;
    let cells = cells(&plan, &ratings, !a.include_incomplete);
    if cells.is_empty() {
        return Err(Error::Rating("no fully rated items to analyse".into()));
    }
    let result = match a.test {
        TestKind::Bootstrap => {
            let credits: Vec<f64> = cells
                .iter()
                .map(|c| first_pref_credits(c)[&method].0)
                .collect();
            bootstrap_ci(&credits, a.iterations, a.level, a.seed)?
        }
        TestKind::Wilcoxon => {
            let agg = match a.aggregate.as_str() {
                "first_pref_count" => RaterAggregate::FirstPrefCount,
                _ => RaterAggregate::MeanRating,
            };
            wilcoxon_signed_rank(&per_rater_differences(&cells, method, baseline, agg))?
        }
        TestKind::Permutation => {
            let mode = if a.exhaustive {
                PermutationMode::Exhaustive
            } else {
                PermutationMode::MonteCarlo {
                    iterations: a.iterations,
                    seed: a.seed,
                }
            };
            permutation_test(&per_item_ranks(&cells, method, baseline), mode)?
        }
    };
    println!("{}", serde_json::to_string_pretty(&result)?);
    Ok(())
}

fn train_scorer_cmd(a: TrainScorerArgs) -> Result<()> {
    let pairs = load_rated_pairs(
        &a.pairs,
        RatingScale {
            min: a.rating_min,
            max: a.rating_max,
        },
    )?;
    let ids: Vec<String> = (0..pairs.len()).map(|i| i.to_string()).collect();
    let split = split_dataset(&ids, parse_ratios(&a.split)?, a.seed)?;
    let pick = |ids: &[String]| {
        ids.iter()
            .map(|i| pairs[i.parse::<usize>().unwrap()].clone())
            .collect::<Vec<_>>()
    };
    let (train, dev, test) = (pick(&split.train), pick(&split.dev), pick(&split.test));
    let cfg = ScorerTrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        seed: a.seed,
        validation_metric: match a.validation_metric.as_str() {
            "mse" => ValidationMetric::Mse,
            _ => ValidationMetric::Spearman,
        },
    };
    let model = EmbeddingModel::new(ProjectionEncoder::random(a.input_dim, a.dim, a.seed));
    let (model, metrics) = train_scorer(model, &train, &dev, &cfg)?;
    save_checkpoint(
        &a.out,
        &model,
        Some(Provenance::from_metrics(a.seed, a.lr, &metrics)),
    )?;

    let test_spearman = if test.len() >= 2 {
        let pred: Vec<f64> = test
            .iter()
            .map(|p| model.similarity(&p.text_1, &p.text_2))
            .collect::<Result<_>>()?;
        let gold: Vec<f64> = test.iter().map(|p| p.empathy_rating).collect();
        Some(spearman(&pred, &gold))
    } else {
        None
    };
    let report = json!({ "split": split, "metrics": metrics, "test_spearman": test_spearman });
    write(
        &a.out.join("metrics.json"),
        serde_json::to_vec_pretty(&report)?,
    )?;
    log::info!(
        "scorer saved to {}; dev spearman {:.4}",
        a.out.display(),
        metrics.final_epoch().dev_spearman
    );
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PromptTarget {
    prompt: String,
    target: String,
}

fn read_pairs(path: &Path) -> Result<Vec<(String, String)>> {
    let rows: Vec<PromptTarget> = read_jsonl(path)?;
    if rows.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} has no records",
            path.display()
        )));
    }
    Ok(rows.into_iter().map(|r| (r.prompt, r.target)).collect())
}

fn sft_cmd(a: SftArgs) -> Result<()> {
    let data = read_pairs(&a.data)?;
    let mut model = match &a.init {
        Some(dir) => load_tiny_lm(dir)?.0,
        None => {
            let mut texts: Vec<String> = data
                .iter()
                .flat_map(|(p, t)| [p.clone(), t.clone()])
                .collect();
            if let Some(c) = &a.vocab_corpus {
                texts.extend(read_lines(c)?);
            }
            let vocab = Vocab::build(texts.iter().map(String::as_str));
            TinyLm::new(
                vocab,
                TinyLmConfig {
                    dim: a.dim,
                    layers: a.layers,
                    seed: a.seed,
                },
            )?
        }
    };
    let cfg = SftConfig {
        epochs: a.epochs,
        base_lr: a.lr,
        warmup_steps: a.warmup_steps,
        batch_size: a.batch_size,
        seed: a.seed,
    };
    let log = sft(&mut model, &data, &cfg)?;
    let mask = log.mask.clone();
    save_tiny_lm(
        &a.out,
        &model,
        mask,
        json!({ "stage": "sft", "config": cfg }),
    )?;
    if let (Some(first), Some(last)) = (log.steps.first(), log.steps.last()) {
        log::info!(
            "sft loss {:.4} -> {:.4} over {} steps",
            first.loss,
            last.loss,
            log.steps.len()
        );
    }
    Ok(())
}

fn align_cmd(a: AlignArgs) -> Result<()> {
    let (mut model, _) = load_tiny_lm(&a.model)?;
    let data = read_pairs(&a.data)?;
    let mut cfg = match &a.config {
        Some(path) => RunConfig::load(path)?
            .align
            .ok_or_else(|| Error::Config(vec!["align: section missing".into()]))?,
        None => {
            let loss: LossKind = a
                .loss
                .as_deref()
                .ok_or_else(|| Error::Config(vec!["align: --loss or --config is required".into()]))?
                .parse()?;
            let mut c = AlignConfig::new(loss);
            c.seed = a.seed.ok_or_else(|| {
                Error::Config(vec!["align: --seed or --config is required".into()])
            })?;
            c
        }
    };
    if let Some(l) = &a.loss {
        let loss: LossKind = l.parse()?;
        if loss != cfg.loss {
            cfg.loss = loss;
            cfg.epochs = loss.default_epochs();
        }
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(v) = a.lr {
        cfg.base_lr = v;
    }
    if let Some(v) = a.margin {
        cfg.w_margin = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.trainable_layers {
        cfg.trainable_layers = v;
    }
    if a.max_steps.is_some() {
        cfg.max_steps = a.max_steps;
    }
    let gen = GenerationConfig {
        temperature: a.temperature,
        max_tokens: a.max_tokens,
    };
    gen.validate()?;
    // Fail on a bad layer count before spending time on hypotheses.
    model.trainable_mask(cfg.trainable_layers)?;
    let examples = build_alignment_examples(&model, &data, &gen, RougeKind::RougeL, cfg.seed)?;
    let before = mean_scores(&model, &examples)?;
    let log = align(&mut model, &examples, &cfg)?;
    let after = mean_scores(&model, &examples)?;
    save_tiny_lm(
        &a.out,
        &model,
        log.mask.clone(),
        json!({ "stage": "align", "config": cfg, "generation": gen }),
    )?;
    let report = json!({
        "steps": log.steps.len(),
        "s_target": [before.0, after.0],
        "s_hypo": [before.1, after.1],
        "examples": examples,
    });
    write(
        &a.out.join("align_report.json"),
        serde_json::to_vec_pretty(&report)?,
    )?;
    log::info!(
        "s_target {:.4} -> {:.4}, s_hypo {:.4} -> {:.4}",
        before.0,
        after.0,
        before.1,
        after.1
    );
    Ok(())
}

fn eval(cmd: EvalCommand) -> Result<()> {
    match cmd {
        EvalCommand::Rouge { system, refs, kind } => {
            let kind: RougeKind = kind.parse()?;
            let score = corpus_rouge(kind, &read_lines(&system)?, &read_lines(&refs)?)?;
            println!("{}", serde_json::to_string_pretty(&score)?);
            Ok(())
        }
        EvalCommand::Neutrality {
            systems,
            pairs,
            sample,
            seed,
            scorer,
            out_dir,
        } => {
            let pairs = load_view_pairs(&pairs)?;
            let mut outputs = BTreeMap::new();
            for entry in &systems {
                let (name, path) = entry.split_once('=').ok_or_else(|| {
                    Error::InvalidInput(format!("expected name=path, got `{entry}`"))
                })?;
                outputs.insert(name.to_string(), read_lines(Path::new(path))?);
            }
            let scorer: Box<dyn EmpathyScorer> = match scorer {
                Some(dir) => Box::new(load_checkpoint(dir)?.0),
                None => Box::new(EmbeddingModel::new(HashEncoder::new(DEFAULT_HASH_DIM))),
            };
            let report = neutrality_report(&outputs, &pairs, scorer.as_ref(), sample, seed)?;
            write(&out_dir.join("neutrality.tsv"), report.to_tsv())?;
            write(&out_dir.join("neutrality.svg"), report.to_svg())?;
            write(
                &out_dir.join("neutrality.json"),
                serde_json::to_vec_pretty(&report)?,
            )?;
            for (name, g) in &report.systems {
                println!(
                    "{name}\tmedian {:.4}\tmean {:.4}",
                    g.summary.median, g.summary.mean
                );
            }
            Ok(())
        }
        EvalCommand::Forgetting { model, corpus } => {
            let (m, _) = load_tiny_lm(&model)?;
            println!("{:.6}", forgetting_loglik(&m, &read_lines(&corpus)?)?);
            Ok(())
        }
        EvalCommand::Sample {
            model,
            prompts,
            refs,
            k,
            seed,
            temperature,
            max_tokens,
        } => {
            let (m, _) = load_tiny_lm(&model)?;
            let prompts = read_lines(&prompts)?;
            let refs = refs.map(|r| read_lines(&r)).transpose()?;
            if let Some(r) = &refs {
                if r.len() != prompts.len() {
                    return Err(Error::InvalidInput(format!(
                        "{} references for {} prompts",
                        r.len(),
                        prompts.len()
                    )));
                }
            }
            let gen = GenerationConfig {
                temperature,
                max_tokens,
            };
            gen.validate()?;
            let none = |_: &str| Ok(0.0);
            for (i, p) in prompts.iter().enumerate() {
                let item_seed = seed.wrapping_add(i as u64);
                let out = match &refs {
                    Some(r) => best_of_k(
                        &m,
                        p,
                        k,
                        &gen,
                        item_seed,
                        &rouge_metric(RougeKind::RougeL, &r[i]),
                    )?,
                    None => best_of_k(&m, p, 1, &gen, item_seed, &none)?,
                };
                println!("{out}");
            }
            Ok(())
        }
    }
}
