use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::RatedStoryPair;
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};

use super::{cosine, EmbeddingModel, Encoder, ProjectionEncoder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationMetric {
    Spearman,
    Mse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub validation_metric: ValidationMetric,
}

impl Default for ScorerTrainConfig {
    fn default() -> Self {
        ScorerTrainConfig {
            epochs: 10,
            batch_size: 16,
            learning_rate: 1e-2,
            seed: 0,
            validation_metric: ValidationMetric::Spearman,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 0 is the untrained model.
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_mse: f64,
    pub dev_spearman: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub validation_metric: ValidationMetric,
    pub train_size: usize,
    pub dev_size: usize,
    pub epochs: Vec<EpochMetrics>,
}

impl TrainMetrics {
    pub fn final_epoch(&self) -> &EpochMetrics {
        self.epochs.last().expect("epoch 0 is always recorded")
    }
}

/// Cosine mapped onto the rating scale `[0, 1]`.
fn predicted_rating(cos: f64) -> f64 {
    0.5 * (1.0 + cos)
}

struct Prepared {
    f1: Vec<(usize, f64)>,
    f2: Vec<(usize, f64)>,
    target: f64,
}

fn prepare(enc: &ProjectionEncoder, pairs: &[RatedStoryPair]) -> Vec<Prepared> {
    pairs
        .iter()
        .map(|p| Prepared {
            f1: enc.sparse_features(&p.text_1),
            f2: enc.sparse_features(&p.text_2),
            target: p.empathy_rating,
        })
        .collect()
}

fn predictions(enc: &ProjectionEncoder, data: &[Prepared]) -> Vec<f64> {
    data.iter()
        .map(|d| {
            predicted_rating(cosine(
                &enc.project_sparse(&d.f1),
                &enc.project_sparse(&d.f2),
            ))
        })
        .collect()
}

fn mse(pred: &[f64], data: &[Prepared]) -> f64 {
    if data.is_empty() {
        return f64::NAN;
    }
    pred.iter()
        .zip(data)
        .map(|(p, d)| (p - d.target).powi(2))
        .sum::<f64>()
        / data.len() as f64
}

/// Gradient of `(1+cos(u,v))/2 - y)^2` with respect to `u` given `v`.
fn cos_grad(u: &[f64], v: &[f64], cos: f64) -> Vec<f64> {
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return vec![0.0; u.len()];
    }
    u.iter()
        .zip(v)
        .map(|(ui, vi)| vi / (nu * nv) - cos * ui / (nu * nu))
        .collect()
}

/// Fits the projection so that `(1 + cosine) / 2` regresses onto the
/// normalized human ratings (mean-squared error, Adam).
pub fn train_scorer(
    mut model: EmbeddingModel<ProjectionEncoder>,
    train: &[RatedStoryPair],
    dev: &[RatedStoryPair],
    cfg: &ScorerTrainConfig,
) -> Result<(EmbeddingModel<ProjectionEncoder>, TrainMetrics)> {
    if train.len() < 2 {
        return Err(Error::Training(format!(
            "need at least 2 training pairs, got {}",
            train.len()
        )));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::Training(
            "epochs and batch_size must be positive".into(),
        ));
    }
    if !(cfg.learning_rate >= 0.0 && cfg.learning_rate.is_finite()) {
        return Err(Error::Training(format!(
            "bad learning rate {}",
            cfg.learning_rate
        )));
    }
    if dev.is_empty() {
        log::warn!("empty dev set: dev metrics will be NaN");
    }

    let train_data = prepare(&model.encoder, train);
    let dev_data = prepare(&model.encoder, dev);
    let enc_dim = model.encoder.dim();
    let input_dim = model.encoder.input_dim;

    let evaluate = |enc: &ProjectionEncoder, epoch: usize| {
        let tp = predictions(enc, &train_data);
        let dp = predictions(enc, &dev_data);
        let targets: Vec<f64> = dev_data.iter().map(|d| d.target).collect();
        EpochMetrics {
            epoch,
            train_loss: mse(&tp, &train_data),
            dev_mse: mse(&dp, &dev_data),
            dev_spearman: spearman(&dp, &targets),
        }
    };

    let mut history = vec![evaluate(&model.encoder, 0)];
    let mut adam = Adam::new(AdamConfig::default(), &[model.encoder.weights.len()]);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut grad = vec![0.0; model.encoder.weights.len()];

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let d = &train_data[i];
                let u = model.encoder.project_sparse(&d.f1);
                let v = model.encoder.project_sparse(&d.f2);
                let cos = cosine(&u, &v);
                // d/dcos of (pred - y)^2 with pred = (1 + cos) / 2
                let dl_dcos = (predicted_rating(cos) - d.target) * scale;
                let gu = cos_grad(&u, &v, cos);
                let gv = cos_grad(&v, &u, cos);
                for r in 0..enc_dim {
                    let row = &mut grad[r * input_dim..(r + 1) * input_dim];
                    for &(j, x) in &d.f1 {
                        row[j] += dl_dcos * gu[r] * x;
                    }
                    for &(j, x) in &d.f2 {
                        row[j] += dl_dcos * gv[r] * x;
                    }
                }
            }
            adam.step_group(0, &mut model.encoder.weights, &grad, cfg.learning_rate);
        }
        let m = evaluate(&model.encoder, epoch);
        log::info!(
            "epoch {epoch}: train mse {:.5}, dev mse {:.5}, dev spearman {:.4}",
            m.train_loss,
            m.dev_mse,
            m.dev_spearman
        );
        history.push(m);
    }

    Ok((
        model,
        TrainMetrics {
            validation_metric: cfg.validation_metric,
            train_size: train.len(),
            dev_size: dev.len(),
            epochs: history,
        },
    ))
}

fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties. NaN when either
/// side is constant or the input has fewer than two points.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    if x.len() < 2 {
        return f64::NAN;
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return f64::NAN;
    }
    sxy / (sxx * syy).sqrt()
}
