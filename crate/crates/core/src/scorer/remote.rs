use std::time::Duration;

use serde::Serialize;

use crate::error::{Error, Result};

use super::Encoder;

/// Client for an embedding server exposing `POST {base_url}/embed` with a
/// body of `{"inputs": [text]}` and a response of `[[f32, ...]]` (the
/// text-embeddings-inference convention). The default model is an
/// e5-family large encoder, which expects a `"query: "` prefix.
pub struct RemoteEncoder {
    base_url: String,
    model: String,
    dim: usize,
    prefix: String,
    client: reqwest::blocking::Client,
}

pub const DEFAULT_REMOTE_MODEL: &str = "intfloat/e5-large-v2";
pub const DEFAULT_REMOTE_DIM: usize = 1024;

#[derive(Serialize)]
struct EmbedRequest<'a> {
    inputs: [&'a str; 1],
}

impl RemoteEncoder {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>, dim: usize) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| Error::Backend {
                backend: "embedding".into(),
                message: e.to_string(),
            })?;
        Ok(RemoteEncoder {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            model: model.into(),
            dim,
            prefix: "query: ".into(),
            client,
        })
    }

    pub fn with_prefix(mut self, prefix: impl Into<String>) -> Self {
        self.prefix = prefix.into();
        self
    }

    pub fn model(&self) -> &str {
        &self.model
    }
}

impl Encoder for RemoteEncoder {
    fn name(&self) -> &str {
        &self.model
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<Vec<f64>> {
        let input = format!("{}{}", self.prefix, text);
        let err = |message: String| Error::Backend {
            backend: self.model.clone(),
            message,
        };
        let resp = self
            .client
            .post(format!("{}/embed", self.base_url))
            .json(&EmbedRequest { inputs: [&input] })
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| err(e.to_string()))?;
        let mut vectors: Vec<Vec<f64>> = resp.json().map_err(|e| err(e.to_string()))?;
        vectors
            .pop()
            .ok_or_else(|| err("empty embedding response".into()))
    }
}
