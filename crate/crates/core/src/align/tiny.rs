//! A small word-level language model with hand-written backpropagation.
//!
//! Each next-token distribution is computed from the previous token and a
//! bag-of-words summary of the prompt:
//!
//! ```text
//! h0 = E[prev] + mean(E[prompt])
//! h  = h + tanh(W_l h + b_l)        for each residual block l
//! p  = softmax(U h + c)
//! ```
//!
//! Parameters are split into groups: the embedding table, one group per
//! block, and the output head. Freezing works at group granularity.

use std::collections::HashMap;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::tokenize;

use super::{GenerationConfig, LanguageModel, TrainableLm};

pub const UNK: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
const SPECIALS: [&str; 3] = ["<unk>", "<bos>", "<eos>"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Special tokens followed by every distinct token of `texts`, sorted.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut toks: Vec<String> = texts.into_iter().flat_map(tokenize).collect();
        toks.sort();
        toks.dedup();
        let words = SPECIALS.iter().map(|s| s.to_string()).chain(toks).collect();
        Self::from_words(words)
    }

    pub fn from_words(words: Vec<String>) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Vocab { words, index }
    }

    fn reindex(&mut self) {
        self.index = self
            .words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TinyLmConfig {
    pub dim: usize,
    pub layers: usize,
    pub seed: u64,
}

impl Default for TinyLmConfig {
    fn default() -> Self {
        TinyLmConfig {
            dim: 16,
            layers: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinyLm {
    pub config: TinyLmConfig,
    pub vocab: Vocab,
    /// `[embedding, block_0, .., block_{L-1}, head]`.
    groups: Vec<Vec<f64>>,
}

/// Activations of one forward step, kept for the backward pass.
struct Step {
    /// Hidden state entering each block, plus the final one (L + 1 entries).
    hs: Vec<Vec<f64>>,
    /// tanh outputs of each block.
    acts: Vec<Vec<f64>>,
    log_probs: Vec<f64>,
}

impl TinyLm {
    pub fn new(vocab: Vocab, config: TinyLmConfig) -> Result<Self> {
        if config.dim == 0 || config.layers == 0 {
            return Err(Error::InvalidInput(
                "tiny model needs dim >= 1 and layers >= 1".into(),
            ));
        }
        let (v, d) = (vocab.len(), config.dim);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut sample = |n: usize, std: f64| -> Vec<f64> {
            let dist = Normal::new(0.0, std).expect("positive std");
            (0..n).map(|_| dist.sample(&mut rng)).collect()
        };
        let mut groups = vec![sample(v * d, 0.5)];
        let w_std = 0.5 / (d as f64).sqrt();
        for _ in 0..config.layers {
            let mut g = sample(d * d, w_std);
            g.extend(std::iter::repeat_n(0.0, d));
            groups.push(g);
        }
        let mut head = sample(v * d, 0.5);
        head.extend(std::iter::repeat_n(0.0, v));
        groups.push(head);
        Ok(TinyLm {
            config,
            vocab,
            groups,
        })
    }

    /// Restores the word index after deserialization.
    pub fn rebuild_index(&mut self) {
        self.vocab.reindex();
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn d(&self) -> usize {
        self.config.dim
    }

    fn context(&self, prompt_ids: &[usize]) -> Vec<f64> {
        let d = self.d();
        let mut c = vec![0.0; d];
        if prompt_ids.is_empty() {
            return c;
        }
        let e = &self.groups[0];
        for &p in prompt_ids {
            for k in 0..d {
                c[k] += e[p * d + k];
            }
        }
        let m = prompt_ids.len() as f64;
        c.iter_mut().for_each(|x| *x /= m);
        c
    }

    fn forward(&self, context: &[f64], prev: usize) -> Step {
        let d = self.d();
        let v = self.vocab_size();
        let e = &self.groups[0];
        let mut h: Vec<f64> = (0..d).map(|k| e[prev * d + k] + context[k]).collect();
        let mut hs = Vec::with_capacity(self.config.layers + 1);
        let mut acts = Vec::with_capacity(self.config.layers);
        for l in 0..self.config.layers {
            let g = &self.groups[1 + l];
            let (w, b) = g.split_at(d * d);
            let a: Vec<f64> = (0..d)
                .map(|i| {
                    let z: f64 = (0..d).map(|j| w[i * d + j] * h[j]).sum::<f64>() + b[i];
                    z.tanh()
                })
                .collect();
            hs.push(h.clone());
            for i in 0..d {
                h[i] += a[i];
            }
            acts.push(a);
        }
        let head = &self.groups[1 + self.config.layers];
        let (u, c) = head.split_at(v * d);
        let logits: Vec<f64> = (0..v)
            .map(|t| (0..d).map(|k| u[t * d + k] * h[k]).sum::<f64>() + c[t])
            .collect();
        hs.push(h);
        Step {
            hs,
            acts,
            log_probs: log_softmax(&logits),
        }
    }

    fn ids(&self, prompt: &str, completion: &str) -> Result<(Vec<usize>, Vec<usize>)> {
        let target = self.vocab.encode(completion);
        if target.is_empty() {
            return Err(Error::InvalidInput("completion has no tokens".into()));
        }
        Ok((self.vocab.encode(prompt), target))
    }
}

pub(crate) fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

impl LanguageModel for TinyLm {
    fn name(&self) -> &str {
        "tiny_lm"
    }

    fn token_log_probs(&self, prompt: &str, completion: &str) -> Result<Vec<f64>> {
        let (p, target) = self.ids(prompt, completion)?;
        let ctx = self.context(&p);
        let mut prev = BOS;
        Ok(target
            .iter()
            .map(|&y| {
                let lp = self.forward(&ctx, prev).log_probs[y];
                prev = y;
                lp
            })
            .collect())
    }

    /// Multinomial sampling; `<unk>` and `<bos>` are never emitted and
    /// `<eos>` is suppressed until at least one token has been produced.
    fn generate(
        &self,
        prompt: &str,
        cfg: &GenerationConfig,
        rng: &mut dyn RngCore,
    ) -> Result<String> {
        cfg.validate()?;
        let ctx = self.context(&self.vocab.encode(prompt));
        let mut prev = BOS;
        let mut out: Vec<&str> = Vec::new();
        while out.len() < cfg.max_tokens {
            let lp = self.forward(&ctx, prev).log_probs;
            let allowed = |t: usize| t != UNK && t != BOS && !(t == EOS && out.is_empty());
            let next = if cfg.temperature == 0.0 {
                (0..lp.len())
                    .filter(|&t| allowed(t))
                    .max_by(|&a, &b| lp[a].total_cmp(&lp[b]).then(b.cmp(&a)))
                    .expect("vocabulary has a word")
            } else {
                let weights: Vec<f64> = lp
                    .iter()
                    .enumerate()
                    .map(|(t, l)| {
                        if allowed(t) {
                            (l / cfg.temperature).exp()
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let total: f64 = weights.iter().sum();
                let mut r = rng.random::<f64>() * total;
                let mut pick = weights.len() - 1;
                for (t, w) in weights.iter().enumerate() {
                    if *w > 0.0 {
                        pick = t;
                        if r < *w {
                            break;
                        }
                        r -= w;
                    }
                }
                pick
            };
            if next == EOS {
                break;
            }
            out.push(self.vocab.word(next));
            prev = next;
        }
        Ok(out.join(" "))
    }
}

impl TrainableLm for TinyLm {
    fn num_layers(&self) -> usize {
        self.config.layers
    }

    fn group_names(&self) -> Vec<String> {
        std::iter::once("embedding".to_string())
            .chain((0..self.config.layers).map(|l| format!("block_{l}")))
            .chain(std::iter::once("head".to_string()))
            .collect()
    }

    fn groups(&self) -> &[Vec<f64>] {
        &self.groups
    }

    fn groups_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.groups
    }

    fn trainable_mask(&self, trainable_layers: usize) -> Result<Vec<bool>> {
        let layers = self.config.layers;
        if trainable_layers == 0 {
            return Err(Error::Training(
                "all layers frozen; nothing to train".into(),
            ));
        }
        if trainable_layers > layers {
            return Err(Error::Training(format!(
                "{trainable_layers} trainable layers requested, model has {layers}"
            )));
        }
        let mut mask = vec![false; layers + 2];
        for l in layers - trainable_layers..layers {
            mask[1 + l] = true;
        }
        mask[layers + 1] = true;
        Ok(mask)
    }

    fn log_prob_grad(&self, prompt: &str, completion: &str) -> Result<(f64, Vec<Vec<f64>>)> {
        let (p, target) = self.ids(prompt, completion)?;
        let (d, v, layers) = (self.d(), self.vocab_size(), self.config.layers);
        let ctx = self.context(&p);
        let mut grads: Vec<Vec<f64>> = self.groups.iter().map(|g| vec![0.0; g.len()]).collect();
        let mut total = 0.0;
        let mut prev = BOS;
        let mut d_ctx = vec![0.0; d];

        for &y in &target {
            let step = self.forward(&ctx, prev);
            total += step.log_probs[y];

            // d log p(y) / d logits = onehot(y) - softmax.
            let dlogits: Vec<f64> = step
                .log_probs
                .iter()
                .enumerate()
                .map(|(t, lp)| f64::from(u8::from(t == y)) - lp.exp())
                .collect();
            let h_top = &step.hs[layers];
            let u = &self.groups[layers + 1][..v * d];
            let mut dh = vec![0.0; d];
            {
                let gh = &mut grads[layers + 1];
                for t in 0..v {
                    let g = dlogits[t];
                    for k in 0..d {
                        gh[t * d + k] += g * h_top[k];
                        dh[k] += g * u[t * d + k];
                    }
                    gh[v * d + t] += g;
                }
            }
            for l in (0..layers).rev() {
                let w = &self.groups[1 + l][..d * d];
                let h_in = &step.hs[l];
                let dz: Vec<f64> = (0..d)
                    .map(|i| dh[i] * (1.0 - step.acts[l][i].powi(2)))
                    .collect();
                let gb = &mut grads[1 + l];
                let mut dh_in = dh.clone();
                for i in 0..d {
                    for j in 0..d {
                        gb[i * d + j] += dz[i] * h_in[j];
                        dh_in[j] += w[i * d + j] * dz[i];
                    }
                    gb[d * d + i] += dz[i];
                }
                dh = dh_in;
            }
            let ge = &mut grads[0];
            for k in 0..d {
                ge[prev * d + k] += dh[k];
                d_ctx[k] += dh[k];
            }
            prev = y;
        }
        if !p.is_empty() {
            let m = p.len() as f64;
            let ge = &mut grads[0];
            for &t in &p {
                for k in 0..d {
                    ge[t * d + k] += d_ctx[k] / m;
                }
            }
        }
        if !total.is_finite() {
            return Err(Error::NonFinite("sequence log-probability"));
        }
        Ok((total, grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::sequence_log_prob;

    fn model() -> TinyLm {
        let vocab = Vocab::build([
            "fix the lights",
            "keep the park open",
            "leash dogs near kids",
        ]);
        TinyLm::new(
            vocab,
            TinyLmConfig {
                dim: 6,
                layers: 3,
                seed: 11,
            },
        )
        .unwrap()
    }

    #[test]
    fn next_token_distribution_normalizes() {
        let m = model();
        let step = m.forward(&m.context(&[3, 4]), BOS);
        let total: f64 = step.log_probs.iter().map(|l| l.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = model();
        let (prompt, completion) = ("keep the park open", "fix the lights near kids");
        let (_, grads) = m.log_prob_grad(prompt, completion).unwrap();
        let h = 1e-6;
        for g in 0..m.groups.len() {
            for &i in &[0usize, 5, m.groups[g].len() - 1] {
                let mut plus = m.clone();
                plus.groups[g][i] += h;
                let mut minus = m.clone();
                minus.groups[g][i] -= h;
                let fd = (sequence_log_prob(&plus, prompt, completion).unwrap()
                    - sequence_log_prob(&minus, prompt, completion).unwrap())
                    / (2.0 * h);
                assert!(
                    (fd - grads[g][i]).abs() < 1e-6 * (1.0 + fd.abs()),
                    "group {g} idx {i}: fd {fd} analytic {}",
                    grads[g][i]
                );
            }
        }
    }

    #[test]
    fn mask_freezes_leading_groups() {
        let m = model();
        assert_eq!(
            m.trainable_mask(2).unwrap(),
            vec![false, false, true, true, true]
        );
        assert_eq!(
            m.trainable_mask(3).unwrap(),
            vec![false, true, true, true, true]
        );
        assert!(m.trainable_mask(0).is_err());
        assert!(m.trainable_mask(4).is_err());
    }

    #[test]
    fn generation_is_seeded_and_in_vocab() {
        let m = model();
        let cfg = GenerationConfig::default();
        let a = m
            .generate("keep the park", &cfg, &mut ChaCha8Rng::seed_from_u64(5))
            .unwrap();
        let b = m
            .generate("keep the park", &cfg, &mut ChaCha8Rng::seed_from_u64(5))
            .unwrap();
        assert_eq!(a, b);
        assert!(!a.is_empty());
        assert!(tokenize(&a).iter().all(|t| m.vocab.id(t) > EOS));
    }

    #[test]
    fn unknown_words_map_to_unk() {
        assert_eq!(
            model().vocab.encode("zebra lights"),
            vec![UNK, model().vocab.id("lights")]
        );
    }
}
