use crate::error::Result;
use crate::text::{fnv1a, tokenize};

use super::Encoder;

/// Deterministic bag-of-words encoder: each token adds 1 to the bucket
/// `fnv1a(token) % dim`. Without bucket collisions the cosine of two
/// embeddings equals the cosine of their token-count vectors.
#[derive(Debug, Clone)]
pub struct HashEncoder {
    dim: usize,
}

impl HashEncoder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "hash encoder dimension must be positive");
        HashEncoder { dim }
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a(token.as_bytes()) % self.dim as u64) as usize
    }

    /// Token-count features, used as input by the trainable encoder too.
    pub fn features(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for tok in tokenize(text) {
            v[self.bucket(&tok)] += 1.0;
        }
        v
    }
}

impl Encoder for HashEncoder {
    fn name(&self) -> &str {
        "hash"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<Vec<f64>> {
        Ok(self.features(text))
    }
}
