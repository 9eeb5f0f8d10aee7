//! Supervised fine-tuning and preference alignment of small language models.
//!
//! Two alignment objectives are provided, both defined on sequence scores
//! `s = sum of completion-token log-probabilities`:
//!
//! * NCE: `-log σ(s_target) - log σ(-s_hypo)`, raising the likelihood of a
//!   validated compromise and lowering that of the model's own output;
//! * task loss: `max(0, s_hypo - s_target + |r_target - r_hypo| * w)`, a
//!   hinge whose margin grows with the ROUGE gap (the margin is a constant
//!   with respect to the parameters).

mod checkpoint;
mod simple;
mod tiny;

pub use checkpoint::{load_tiny_lm, save_tiny_lm, LmCheckpointManifest};
pub use simple::{BigramLm, UniformLm};
pub use tiny::{TinyLm, TinyLmConfig, Vocab, BOS, EOS, UNK};

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::rouge::{rouge, RougeKind};
use crate::optim::{Adam, AdamConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub temperature: f64,
    pub max_tokens: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            temperature: 1.0,
            max_tokens: 24,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) || self.max_tokens == 0 {
            return Err(Error::InvalidInput(format!(
                "generation needs temperature >= 0 and max_tokens >= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

pub trait LanguageModel: Send + Sync {
    fn name(&self) -> &str;

    /// Log-probability of each completion token given the prompt and the
    /// completion tokens before it. Prompt tokens are not scored.
    fn token_log_probs(&self, prompt: &str, completion: &str) -> Result<Vec<f64>>;

    fn generate(
        &self,
        prompt: &str,
        cfg: &GenerationConfig,
        rng: &mut dyn RngCore,
    ) -> Result<String>;
}

/// A model whose parameters are exposed as ordered groups (embedding first,
/// output head last) for optimisation and freezing.
pub trait TrainableLm: LanguageModel {
    fn num_layers(&self) -> usize;
    fn group_names(&self) -> Vec<String>;
    fn groups(&self) -> &[Vec<f64>];
    fn groups_mut(&mut self) -> &mut [Vec<f64>];

    /// Per-group trainable flags keeping only the last `trainable_layers`
    /// blocks and the output head trainable.
    fn trainable_mask(&self, trainable_layers: usize) -> Result<Vec<bool>>;

    /// Sequence log-probability and its gradient, group by group.
    fn log_prob_grad(&self, prompt: &str, completion: &str) -> Result<(f64, Vec<Vec<f64>>)>;
}

pub fn sequence_log_prob(model: &dyn LanguageModel, prompt: &str, completion: &str) -> Result<f64> {
    let lps = model.token_log_probs(prompt, completion)?;
    if lps.is_empty() {
        return Err(Error::InvalidInput("completion has no tokens".into()));
    }
    let s: f64 = lps.iter().sum();
    if !s.is_finite() {
        return Err(Error::NonFinite("sequence log-probability"));
    }
    Ok(s)
}

/// `log σ(x)` without overflow for large |x|.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub fn nce_loss(s_target: f64, s_hypo: f64) -> Result<f64> {
    finite(&[s_target, s_hypo], "nce loss input")?;
    Ok(-log_sigmoid(s_target) - log_sigmoid(-s_hypo))
}

/// `(∂L/∂s_target, ∂L/∂s_hypo)` of [`nce_loss`].
pub fn nce_grad(s_target: f64, s_hypo: f64) -> Result<(f64, f64)> {
    finite(&[s_target, s_hypo], "nce loss input")?;
    Ok((sigmoid(s_target) - 1.0, sigmoid(s_hypo)))
}

pub fn task_loss(
    s_target: f64,
    s_hypo: f64,
    target_rouge: f64,
    hypo_rouge: f64,
    w_margin: f64,
) -> Result<f64> {
    finite(
        &[s_target, s_hypo, target_rouge, hypo_rouge, w_margin],
        "task loss input",
    )?;
    if w_margin < 0.0 {
        return Err(Error::InvalidInput(format!(
            "margin weight must be >= 0, got {w_margin}"
        )));
    }
    Ok((s_hypo - s_target + (target_rouge - hypo_rouge).abs() * w_margin).max(0.0))
}

/// Subgradient of [`task_loss`]; zero at and below the hinge.
pub fn task_grad(
    s_target: f64,
    s_hypo: f64,
    target_rouge: f64,
    hypo_rouge: f64,
    w_margin: f64,
) -> Result<(f64, f64)> {
    if task_loss(s_target, s_hypo, target_rouge, hypo_rouge, w_margin)? > 0.0 {
        Ok((-1.0, 1.0))
    } else {
        Ok((0.0, 0.0))
    }
}

/// Linear warm-up to `base_lr`, then cosine decay to zero at `total_steps`.
pub fn lr_schedule(step: usize, total_steps: usize, warmup_steps: usize, base_lr: f64) -> f64 {
    if step < warmup_steps {
        return base_lr * step as f64 / warmup_steps as f64;
    }
    if total_steps <= warmup_steps {
        return base_lr;
    }
    let progress = ((step - warmup_steps) as f64 / (total_steps - warmup_steps) as f64).min(1.0);
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentExample {
    pub prompt: String,
    pub target: String,
    pub hypothesis: String,
    pub target_rouge: f64,
    pub hypo_rouge: f64,
}

/// Samples one hypothesis per `(prompt, target)` from `model` and scores it
/// against the target. The target's own ROUGE is the self-reference value.
pub fn build_alignment_examples(
    model: &dyn LanguageModel,
    data: &[(String, String)],
    gen: &GenerationConfig,
    kind: RougeKind,
    seed: u64,
) -> Result<Vec<AlignmentExample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    data.iter()
        .map(|(prompt, target)| {
            let hypothesis = model.generate(prompt, gen, &mut rng)?;
            Ok(AlignmentExample {
                prompt: prompt.clone(),
                target: target.clone(),
                target_rouge: rouge(kind, target, target)?.f1,
                hypo_rouge: rouge(kind, &hypothesis, target)?.f1,
                hypothesis,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Nce,
    TaskLoss,
}

impl LossKind {
    pub fn default_epochs(self) -> usize {
        match self {
            LossKind::Nce => 8,
            LossKind::TaskLoss => 12,
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nce" => Ok(LossKind::Nce),
            "task" | "task_loss" => Ok(LossKind::TaskLoss),
            _ => Err(Error::InvalidInput(format!(
                "unknown loss `{s}`; expected nce or task"
            ))),
        }
    }
}

pub const DEFAULT_LR: f64 = 3e-5;
pub const DEFAULT_MARGIN: f64 = 10.0;
pub const DEFAULT_TRAINABLE_LAYERS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    pub loss: LossKind,
    pub epochs: usize,
    pub base_lr: f64,
    /// `None` uses 10% of the total number of steps.
    pub warmup_steps: Option<usize>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub w_margin: f64,
    pub trainable_layers: usize,
    pub batch_size: usize,
    /// Stop after this many optimizer steps even if epochs remain.
    pub max_steps: Option<usize>,
    pub seed: u64,
}

impl AlignConfig {
    pub fn new(loss: LossKind) -> Self {
        AlignConfig {
            loss,
            epochs: loss.default_epochs(),
            base_lr: DEFAULT_LR,
            warmup_steps: None,
            adam_beta1: 0.9,
            adam_beta2: 0.99,
            w_margin: DEFAULT_MARGIN,
            trainable_layers: DEFAULT_TRAINABLE_LAYERS,
            batch_size: 1,
            max_steps: None,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.epochs == 0 {
            errs.push("epochs must be positive");
        }
        if self.batch_size == 0 {
            errs.push("batch_size must be positive");
        }
        if !(self.w_margin >= 0.0) {
            errs.push("w_margin must be >= 0");
        }
        if !(self.base_lr >= 0.0) {
            errs.push("base_lr must be >= 0");
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Training(errs.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepLog>,
    pub mask: Vec<bool>,
}

/// Shared optimisation loop: visits examples in a seeded order each epoch,
/// averages `grad_of` over each batch and applies Adam to unmasked groups.
fn train_loop<M: TrainableLm + ?Sized, T>(
    model: &mut M,
    data: &[T],
    epochs: usize,
    batch_size: usize,
    max_steps: Option<usize>,
    base_lr: f64,
    warmup: Option<usize>,
    adam: AdamConfig,
    mask: Vec<bool>,
    seed: u64,
    mut grad_of: impl FnMut(&M, &T) -> Result<(f64, Vec<Vec<f64>>)>,
) -> Result<TrainLog> {
    if data.is_empty() {
        return Err(Error::Training("no training examples".into()));
    }
    let per_epoch = data.len().div_ceil(batch_size);
    let total = max_steps.map_or(epochs * per_epoch, |m| m.min(epochs * per_epoch));
    let warmup = warmup.unwrap_or(total / 10).min(total);
    let sizes: Vec<usize> = model.groups().iter().map(Vec::len).collect();
    let mut opt = Adam::new(adam, &sizes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = TrainLog {
        steps: Vec::with_capacity(total),
        mask: mask.clone(),
    };
    let mut order: Vec<usize> = (0..data.len()).collect();
    'outer: for _ in 0..epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(batch_size) {
            let step = log.steps.len();
            if step >= total {
                break 'outer;
            }
            let mut acc: Vec<Vec<f64>> = sizes.iter().map(|&n| vec![0.0; n]).collect();
            let mut loss = 0.0;
            for &i in batch {
                let (l, g) = grad_of(model, &data[i])?;
                loss += l;
                for (a, gi) in acc.iter_mut().zip(g) {
                    a.iter_mut().zip(gi).for_each(|(x, y)| *x += y);
                }
            }
            let scale = 1.0 / batch.len() as f64;
            let lr = lr_schedule(step, total, warmup, base_lr);
            for (g, params) in model.groups_mut().iter_mut().enumerate() {
                if mask[g] {
                    acc[g].iter_mut().for_each(|x| *x *= scale);
                    opt.step_group(g, params, &acc[g], lr);
                }
            }
            if model.groups().iter().flatten().any(|p| !p.is_finite()) {
                return Err(Error::NonFinite("model parameters"));
            }
            log.steps.push(StepLog {
                step,
                lr,
                loss: loss * scale,
            });
        }
    }
    Ok(log)
}

fn scaled(mut g: Vec<Vec<f64>>, k: f64) -> Vec<Vec<f64>> {
    g.iter_mut().flatten().for_each(|x| *x *= k);
    g
}

fn add_into(a: &mut [Vec<f64>], b: Vec<Vec<f64>>) {
    for (x, y) in a.iter_mut().zip(b) {
        x.iter_mut().zip(y).for_each(|(p, q)| *p += q);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub warmup_steps: Option<usize>,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SftConfig {
    fn default() -> Self {
        SftConfig {
            epochs: 1,
            base_lr: DEFAULT_LR,
            warmup_steps: None,
            batch_size: 1,
            seed: 0,
        }
    }
}

/// Negative log-likelihood training on `(prompt, target)` pairs. All
/// parameter groups are updated.
pub fn sft<M: TrainableLm>(
    model: &mut M,
    examples: &[(String, String)],
    cfg: &SftConfig,
) -> Result<TrainLog> {
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::Training(
            "epochs and batch_size must be positive".into(),
        ));
    }
    let mask = vec![true; model.groups().len()];
    train_loop(
        model,
        examples,
        cfg.epochs,
        cfg.batch_size,
        None,
        cfg.base_lr,
        cfg.warmup_steps,
        AdamConfig::default(),
        mask,
        cfg.seed,
        |m, (prompt, target)| {
            let (s, g) = m.log_prob_grad(prompt, target)?;
            Ok((-s, scaled(g, -1.0)))
        },
    )
}

/// Preference alignment on pre-generated hypotheses, updating only the
/// groups selected by `cfg.trainable_layers`.
pub fn align<M: TrainableLm>(
    model: &mut M,
    data: &[AlignmentExample],
    cfg: &AlignConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    let mask = model.trainable_mask(cfg.trainable_layers)?;
    let adam = AdamConfig {
        beta1: cfg.adam_beta1,
        beta2: cfg.adam_beta2,
        ..AdamConfig::default()
    };
    train_loop(
        model,
        data,
        cfg.epochs,
        cfg.batch_size,
        cfg.max_steps,
        cfg.base_lr,
        cfg.warmup_steps,
        adam,
        mask,
        cfg.seed,
        |m, ex| {
            let (s_t, g_t) = m.log_prob_grad(&ex.prompt, &ex.target)?;
            let (s_h, g_h) = m.log_prob_grad(&ex.prompt, &ex.hypothesis)?;
            let (loss, (d_t, d_h)) = match cfg.loss {
                LossKind::Nce => (nce_loss(s_t, s_h)?, nce_grad(s_t, s_h)?),
                LossKind::TaskLoss => {
                    let args = (s_t, s_h, ex.target_rouge, ex.hypo_rouge, cfg.w_margin);
                    (
                        task_loss(args.0, args.1, args.2, args.3, args.4)?,
                        task_grad(args.0, args.1, args.2, args.3, args.4)?,
                    )
                }
            };
            let mut g = scaled(g_t, d_t);
            add_into(&mut g, scaled(g_h, d_h));
            Ok((loss, g))
        },
    )
}

/// Mean `(s_target, s_hypo)` over a dataset.
pub fn mean_scores(model: &dyn LanguageModel, data: &[AlignmentExample]) -> Result<(f64, f64)> {
    let mut t = 0.0;
    let mut h = 0.0;
    for ex in data {
        t += sequence_log_prob(model, &ex.prompt, &ex.target)?;
        h += sequence_log_prob(model, &ex.prompt, &ex.hypothesis)?;
    }
    let n = data.len() as f64;
    Ok((t / n, h / n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn nce_reference_values() {
        assert_abs_diff_eq!(
            nce_loss(0.0, 0.0).unwrap(),
            2.0 * std::f64::consts::LN_2,
            epsilon = 1e-12
        );
        assert!(nce_loss(40.0, -40.0).unwrap() <= 1e-15);
        // High-precision reference: -ln σ(-1) - ln σ(2).
        assert_abs_diff_eq!(
            nce_loss(-1.0, -2.0).unwrap(),
            1.440189698561195,
            epsilon = 1e-12
        );
        assert!(nce_loss(-1e4, 1e4).unwrap().is_finite());
        assert!(nce_loss(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn task_loss_hand_cases() {
        assert_eq!(task_loss(-2.0, -4.0, 0.5, 0.5, 10.0).unwrap(), 0.0);
        assert_abs_diff_eq!(
            task_loss(-4.0, -2.0, 1.0, 0.8, 10.0).unwrap(),
            4.0,
            epsilon = 1e-12
        );
        assert_eq!(task_loss(-2.0, -10.0, 1.0, 0.5, 10.0).unwrap(), 0.0);
        assert_eq!(task_loss(-3.0, -1.0, 1.0, 0.2, 0.0).unwrap(), 2.0);
        assert!(task_loss(0.0, 0.0, 1.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn schedule_endpoints() {
        assert_eq!(lr_schedule(0, 100, 10, 3e-5), 0.0);
        assert_eq!(lr_schedule(10, 100, 10, 3e-5), 3e-5);
        assert_abs_diff_eq!(lr_schedule(100, 100, 10, 3e-5), 0.0, epsilon = 1e-20);
        assert_abs_diff_eq!(lr_schedule(55, 100, 10, 1.0), 0.5, epsilon = 1e-12);
        assert_eq!(lr_schedule(0, 10, 0, 1.0), 1.0);
    }

    #[test]
    fn uniform_sequence_log_prob() {
        let m = UniformLm::with_size(4).unwrap();
        assert_abs_diff_eq!(
            sequence_log_prob(&m, "any prompt", "a b c").unwrap(),
            3.0 * 0.25f64.ln(),
            epsilon = 1e-12
        );
        assert!(sequence_log_prob(&m, "p", "  ").is_err());
    }

    #[test]
    fn bigram_chain_product() {
        let states = vec!["x".to_string(), "y".to_string(), "z".to_string()];
        let m = BigramLm::new(
            states,
            vec![0.5, 0.25, 0.25],
            vec![
                vec![0.1, 0.6, 0.3],
                vec![0.2, 0.2, 0.6],
                vec![0.5, 0.4, 0.1],
            ],
        )
        .unwrap();
        // P(x) P(y|x) P(z|y) P(x|z) = 0.5 * 0.6 * 0.6 * 0.5
        let expected = (0.5f64 * 0.6 * 0.6 * 0.5).ln();
        assert_abs_diff_eq!(
            sequence_log_prob(&m, "ignored", "x y z x").unwrap(),
            expected,
            epsilon = 1e-12
        );
        assert!(sequence_log_prob(&m, "", "x w").is_err());
    }

    fn toy() -> (TinyLm, Vec<AlignmentExample>) {
        let vocab = Vocab::build(["view a b c", "fair shared lights", "strict fines now"]);
        let m = TinyLm::new(
            vocab,
            TinyLmConfig {
                dim: 8,
                layers: 4,
                seed: 1,
            },
        )
        .unwrap();
        let ex = AlignmentExample {
            prompt: "view a b c".into(),
            target: "fair shared lights".into(),
            hypothesis: "strict fines now".into(),
            target_rouge: 1.0,
            hypo_rouge: 0.0,
        };
        (m, vec![ex; 10])
    }

    #[test]
    fn frozen_groups_are_untouched() {
        let (mut m, data) = toy();
        let before = m.clone();
        let mut cfg = AlignConfig::new(LossKind::Nce);
        cfg.epochs = 1;
        cfg.base_lr = 1e-2;
        let log = align(&mut m, &data, &cfg).unwrap();
        assert_eq!(log.mask, vec![false, false, true, true, true, true]);
        assert_eq!(m.groups()[0], before.groups()[0]);
        assert_eq!(m.groups()[1], before.groups()[1]);
        assert_ne!(m.groups()[5], before.groups()[5]);
    }

    #[test]
    fn all_frozen_is_an_error() {
        let (mut m, data) = toy();
        let mut cfg = AlignConfig::new(LossKind::Nce);
        cfg.trainable_layers = 0;
        assert!(matches!(
            align(&mut m, &data, &cfg),
            Err(Error::Training(_))
        ));
    }

    #[test]
    fn identical_target_and_hypothesis_give_zero_task_update() {
        let (mut m, mut data) = toy();
        for ex in &mut data {
            ex.hypothesis = ex.target.clone();
            ex.hypo_rouge = 1.0;
        }
        let before = m.clone();
        let mut cfg = AlignConfig::new(LossKind::TaskLoss);
        cfg.epochs = 1;
        let log = align(&mut m, &data, &cfg).unwrap();
        assert!(log.steps.iter().all(|s| s.loss == 0.0));
        assert_eq!(m, before);
    }

    #[test]
    fn sft_zero_lr_is_identity_and_positive_lr_helps() {
        let (mut m, data) = toy();
        let pairs: Vec<(String, String)> = data
            .iter()
            .map(|e| (e.prompt.clone(), e.target.clone()))
            .collect();
        let before = m.clone();
        let cfg = SftConfig {
            base_lr: 0.0,
            ..SftConfig::default()
        };
        sft(&mut m, &pairs, &cfg).unwrap();
        assert_eq!(m, before);
        let s0 = sequence_log_prob(&m, &pairs[0].0, &pairs[0].1).unwrap();
        sft(
            &mut m,
            &pairs,
            &SftConfig {
                base_lr: 1e-2,
                ..SftConfig::default()
            },
        )
        .unwrap();
        assert!(sequence_log_prob(&m, &pairs[0].0, &pairs[0].1).unwrap() > s0);
    }

    #[test]
    fn build_examples_scores_hypotheses() {
        let (m, data) = toy();
        let pairs: Vec<(String, String)> = data
            .iter()
            .map(|e| (e.prompt.clone(), e.target.clone()))
            .collect();
        let ex = build_alignment_examples(
            &m,
            &pairs[..3],
            &GenerationConfig::default(),
            RougeKind::RougeL,
            4,
        )
        .unwrap();
        assert_eq!(ex.len(), 3);
        assert!(ex
            .iter()
            .all(|e| e.target_rouge == 1.0 && (0.0..=1.0).contains(&e.hypo_rouge)));
        let again = build_alignment_examples(
            &m,
            &pairs[..3],
            &GenerationConfig::default(),
            RougeKind::RougeL,
            4,
        )
        .unwrap();
        assert_eq!(ex, again);
    }

    proptest! {
        #[test]
        fn nce_gradient_matches_finite_differences(t in -20.0f64..20.0, h in -20.0f64..20.0) {
            let (gt, gh) = nce_grad(t, h).unwrap();
            let e = 1e-5;
            let ft = (nce_loss(t + e, h).unwrap() - nce_loss(t - e, h).unwrap()) / (2.0 * e);
            let fh = (nce_loss(t, h + e).unwrap() - nce_loss(t, h - e).unwrap()) / (2.0 * e);
            prop_assert!((ft - gt).abs() <= 1e-6 * gt.abs().max(1e-3));
            prop_assert!((fh - gh).abs() <= 1e-6 * gh.abs().max(1e-3));
        }

        #[test]
        fn nce_monotone(t in -20.0f64..20.0, h in -20.0f64..20.0, d in 0.01f64..5.0) {
            prop_assert!(nce_loss(t + d, h).unwrap() < nce_loss(t, h).unwrap());
            prop_assert!(nce_loss(t, h + d).unwrap() > nce_loss(t, h).unwrap());
            prop_assert!(nce_loss(t, h).unwrap() >= 0.0);
        }

        #[test]
        fn task_subgradient_away_from_kink(t in -20.0f64..0.0, h in -20.0f64..0.0, gap in 0.0f64..1.0) {
            let value = h - t + gap * 10.0;
            prop_assume!(value.abs() > 1e-3);
            let (gt, gh) = task_grad(t, h, 1.0, 1.0 - gap, 10.0).unwrap();
            let e = 1e-6;
            let ft = (task_loss(t + e, h, 1.0, 1.0 - gap, 10.0).unwrap() - task_loss(t - e, h, 1.0, 1.0 - gap, 10.0).unwrap()) / (2.0 * e);
            let fh = (task_loss(t, h + e, 1.0, 1.0 - gap, 10.0).unwrap() - task_loss(t, h - e, 1.0, 1.0 - gap, 10.0).unwrap()) / (2.0 * e);
            prop_assert!((ft - gt).abs() < 1e-6);
            prop_assert!((fh - gh).abs() < 1e-6);
        }
    }
}
