use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::Result;

use super::{Encoder, HashEncoder};

/// Trainable encoder: hashed token counts followed by a dense projection.
///
/// `weights` is row-major `dim x input_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionEncoder {
    pub input_dim: usize,
    pub dim: usize,
    pub weights: Vec<f64>,
}

impl ProjectionEncoder {
    pub fn random(input_dim: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("valid std");
        ProjectionEncoder {
            input_dim,
            dim,
            weights: (0..input_dim * dim)
                .map(|_| normal.sample(&mut rng))
                .collect(),
        }
    }

    pub(crate) fn features(&self, text: &str) -> Vec<f64> {
        HashEncoder::new(self.input_dim).features(text)
    }

    /// Sparse features as (index, count) to keep training cheap.
    pub(crate) fn sparse_features(&self, text: &str) -> Vec<(usize, f64)> {
        self.features(text)
            .into_iter()
            .enumerate()
            .filter(|(_, x)| *x != 0.0)
            .collect()
    }

    pub(crate) fn project_sparse(&self, feats: &[(usize, f64)]) -> Vec<f64> {
        (0..self.dim)
            .map(|r| {
                let row = &self.weights[r * self.input_dim..(r + 1) * self.input_dim];
                feats.iter().map(|&(j, x)| row[j] * x).sum()
            })
            .collect()
    }
}

impl Encoder for ProjectionEncoder {
    fn name(&self) -> &str {
        "projection"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<Vec<f64>> {
        Ok(self.project_sparse(&self.sparse_features(text)))
    }
}
