//! Deterministic scripted clients for offline runs and tests.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fnv64, normalize, ChatClient, ChatRequest, EmbeddingProvider};
use crate::error::Result;

/// One substring-match rule. The first rule whose `matches` occurs in the
/// request text wins.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StubRule {
    pub matches: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StubScript {
    pub rules: Vec<StubRule>,
    pub fallback: String,
}

impl StubScript {
    pub fn new(rules: Vec<(String, String)>, fallback: impl Into<String>) -> Self {
        StubScript {
            rules: rules
                .into_iter()
                .map(|(matches, response)| StubRule { matches, response })
                .collect(),
            fallback: fallback.into(),
        }
    }

    pub fn respond(&self, text: &str) -> &str {
        self.rules
            .iter()
            .find(|r| text.contains(&r.matches))
            .map(|r| r.response.as_str())
            .unwrap_or(&self.fallback)
    }
}

/// Chat client that answers from a [`StubScript`]; a pure function of
/// (script, request).
pub struct StubChatClient {
    script: StubScript,
}

impl StubChatClient {
    pub fn new(script: StubScript) -> Self {
        StubChatClient { script }
    }
}

impl ChatClient for StubChatClient {
    fn chat(&self, request: &ChatRequest) -> Result<String> {
        request.validate()?;
        Ok(self.script.respond(&request.text_content()).to_string())
    }
}

/// Hash-seeded embedder: the vector for a string is drawn from a ChaCha
/// stream seeded with the string's FNV-1a hash, then unit-normalized.
/// Deterministic and dependency-free; carries no locality (similar strings do
/// not get similar vectors).
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dimension: usize,
}

impl HashEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension >= 1, "embedding dimension must be positive");
        HashEmbedder { dimension }
    }

    fn vector_for(&self, key: &str) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(fnv64(key.as_bytes()));
        let mut v: Vec<f64> = (0..self.dimension)
            // 24-bit mantissa draw: exact IEEE arithmetic, uniform in [-1, 1)
            .map(|_| ((rng.next_u32() >> 8) as f64 / (1u32 << 24) as f64) * 2.0 - 1.0)
            .collect();
        if v.iter().all(|x| *x == 0.0) {
            v[0] = 1.0;
        }
        normalize(&mut v);
        v
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        Ok(self.vector_for(text))
    }

    fn embed_image(&self, image_ref: &str) -> Result<Vec<f64>> {
        Ok(self.vector_for(image_ref))
    }
}

/// A pinned text -> vector entry for scenario files that need controlled
/// similarity orderings rather than hash noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingPin {
    pub text: String,
    pub vector: Vec<f64>,
}

/// Embedder with exact-string pins and a [`HashEmbedder`] fallback. Pinned
/// vectors are normalized on insertion.
pub struct PinnedEmbedder {
    pins: std::collections::HashMap<String, Vec<f64>>,
    fallback: HashEmbedder,
}

impl PinnedEmbedder {
    pub fn new(dimension: usize, pins: Vec<EmbeddingPin>) -> Self {
        let mut map = std::collections::HashMap::new();
        for pin in pins {
            assert_eq!(pin.vector.len(), dimension, "pin dimension mismatch");
            let mut v = pin.vector;
            normalize(&mut v);
            map.insert(pin.text, v);
        }
        PinnedEmbedder {
            pins: map,
            fallback: HashEmbedder::new(dimension),
        }
    }

    fn lookup(&self, key: &str) -> Vec<f64> {
        match self.pins.get(key) {
            Some(v) => v.clone(),
            None => self.fallback.vector_for(key),
        }
    }
}

impl EmbeddingProvider for PinnedEmbedder {
    fn dimension(&self) -> usize {
        self.fallback.dimension()
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        Ok(self.lookup(text))
    }

    fn embed_image(&self, image_ref: &str) -> Result<Vec<f64>> {
        Ok(self.lookup(image_ref))
    }
}
