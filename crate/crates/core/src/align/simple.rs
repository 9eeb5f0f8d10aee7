//! Closed-form models used as analytic references.

use std::collections::HashMap;

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::text::tokenize;

use super::{GenerationConfig, LanguageModel};

/// Every token has probability `1 / vocab_size`, independent of context.
#[derive(Debug, Clone)]
pub struct UniformLm {
    pub words: Vec<String>,
}

impl UniformLm {
    pub fn new(words: Vec<String>) -> Result<Self> {
        if words.is_empty() {
            return Err(Error::InvalidInput(
                "uniform model needs a non-empty vocabulary".into(),
            ));
        }
        Ok(UniformLm { words })
    }

    pub fn with_size(v: usize) -> Result<Self> {
        Self::new((0..v).map(|i| format!("w{i}")).collect())
    }
}

impl LanguageModel for UniformLm {
    fn name(&self) -> &str {
        "uniform"
    }

    fn token_log_probs(&self, _prompt: &str, completion: &str) -> Result<Vec<f64>> {
        let n = tokenize(completion).len();
        if n == 0 {
            return Err(Error::InvalidInput("completion has no tokens".into()));
        }
        Ok(vec![(1.0 / self.words.len() as f64).ln(); n])
    }

    fn generate(
        &self,
        _prompt: &str,
        cfg: &GenerationConfig,
        rng: &mut dyn RngCore,
    ) -> Result<String> {
        cfg.validate()?;
        let n = rng.random_range(1..=cfg.max_tokens);
        Ok((0..n)
            .map(|_| self.words[rng.random_range(0..self.words.len())].as_str())
            .collect::<Vec<_>>()
            .join(" "))
    }
}

/// First-order Markov chain over a closed token set. The prompt is ignored;
/// the first completion token is drawn from `start`.
#[derive(Debug, Clone)]
pub struct BigramLm {
    states: Vec<String>,
    index: HashMap<String, usize>,
    start: Vec<f64>,
    transitions: Vec<Vec<f64>>,
}

impl BigramLm {
    pub fn new(states: Vec<String>, start: Vec<f64>, transitions: Vec<Vec<f64>>) -> Result<Self> {
        let k = states.len();
        let row_ok = |r: &Vec<f64>| {
            r.len() == k
                && r.iter().all(|p| *p >= 0.0)
                && (r.iter().sum::<f64>() - 1.0).abs() < 1e-9
        };
        if k == 0 || !row_ok(&start) || transitions.len() != k || !transitions.iter().all(row_ok) {
            return Err(Error::InvalidInput(
                "bigram table must be square and every row a probability distribution".into(),
            ));
        }
        let index = states
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Ok(BigramLm {
            states,
            index,
            start,
            transitions,
        })
    }

    fn state(&self, token: &str) -> Result<usize> {
        self.index
            .get(token)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("token `{token}` is not a bigram state")))
    }
}

impl LanguageModel for BigramLm {
    fn name(&self) -> &str {
        "bigram"
    }

    fn token_log_probs(&self, _prompt: &str, completion: &str) -> Result<Vec<f64>> {
        let toks = tokenize(completion);
        if toks.is_empty() {
            return Err(Error::InvalidInput("completion has no tokens".into()));
        }
        let ids: Vec<usize> = toks.iter().map(|t| self.state(t)).collect::<Result<_>>()?;
        let mut out = vec![self.start[ids[0]].ln()];
        out.extend(ids.windows(2).map(|w| self.transitions[w[0]][w[1]].ln()));
        Ok(out)
    }

    fn generate(
        &self,
        _prompt: &str,
        cfg: &GenerationConfig,
        rng: &mut dyn RngCore,
    ) -> Result<String> {
        cfg.validate()?;
        let draw = |row: &[f64], rng: &mut dyn RngCore| {
            let mut r: f64 = rng.random();
            for (i, p) in row.iter().enumerate() {
                if r < *p {
                    return i;
                }
                r -= p;
            }
            row.len() - 1
        };
        let mut cur = draw(&self.start, rng);
        let mut out = vec![self.states[cur].as_str()];
        while out.len() < cfg.max_tokens {
            cur = draw(&self.transitions[cur], rng);
            out.push(&self.states[cur]);
        }
        Ok(out.join(" "))
    }
}
