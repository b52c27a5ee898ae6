//! Model-role clients.
//!
//! Two external roles: a vision-language chat model and a text/image
//! embedding model. Each has a live HTTP implementation ([`live`]) and a
//! deterministic scripted stub ([`stub`]) so every pipeline stage can run
//! offline and reproducibly.

pub mod live;
pub mod stub;

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
}

/// One message part: plain text or a reference to an image (path or URL).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    Text(String),
    ImageRef(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub parts: Vec<Part>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: usize,
    pub seed: Option<i64>,
}

impl ChatRequest {
    /// Single user message with optional image part, temperature 0.
    pub fn simple(text: impl Into<String>, image_ref: Option<&str>) -> Self {
        let mut parts = Vec::new();
        if let Some(r) = image_ref {
            parts.push(Part::ImageRef(r.to_string()));
        }
        parts.push(Part::Text(text.into()));
        ChatRequest {
            messages: vec![Message {
                role: Role::User,
                parts,
            }],
            temperature: 0.0,
            max_tokens: 512,
            seed: Some(0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.messages.iter().any(|m| m.role == Role::User) {
            return Err(Error::Param("chat request needs a user message".into()));
        }
        if self.temperature < 0.0 || !self.temperature.is_finite() {
            return Err(Error::Param("temperature must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// All text parts concatenated in order; the stub scripts match on this.
    pub fn text_content(&self) -> String {
        let mut out = String::new();
        for m in &self.messages {
            for p in &m.parts {
                if let Part::Text(t) = p {
                    if !out.is_empty() {
                        out.push('\n');
                    }
                    out.push_str(t);
                }
            }
        }
        out
    }
}

/// Vision-language chat model role.
pub trait ChatClient: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> Result<String>;
}

/// Embedding model role. Outputs are unit-normalized vectors of a fixed
/// dimension shared by text and image inputs.
pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed_text(&self, text: &str) -> Result<Vec<f64>>;
    fn embed_image(&self, image_ref: &str) -> Result<Vec<f64>>;
}

/// Cosine similarity u.v / (|u||v|).
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(dot / (nu.sqrt() * nv.sqrt()))
}

/// Scale `v` to unit Euclidean norm in place.
pub fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
}

/// FNV-1a 64-bit hash; stable across platforms and releases.
pub fn fnv64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

/// Embedding cache keyed by a content hash of the input; entries are computed
/// once and shared. Readers and writers may run concurrently.
pub struct CachedEmbedder<E> {
    inner: E,
    cache: RwLock<HashMap<u64, Arc<Vec<f64>>>>,
}

impl<E: EmbeddingProvider> CachedEmbedder<E> {
    pub fn new(inner: E) -> Self {
        CachedEmbedder {
            inner,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.cache.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get_or_compute(
        &self,
        key: u64,
        compute: impl FnOnce() -> Result<Vec<f64>>,
    ) -> Result<Vec<f64>> {
        if let Some(v) = self.cache.read().unwrap().get(&key) {
            return Ok(v.as_ref().clone());
        }
        let v = Arc::new(compute()?);
        self.cache.write().unwrap().insert(key, Arc::clone(&v));
        Ok(v.as_ref().clone())
    }
}

impl<E: EmbeddingProvider> EmbeddingProvider for CachedEmbedder<E> {
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        let key = fnv64(format!("t\u{0}{text}").as_bytes());
        self.get_or_compute(key, || self.inner.embed_text(text))
    }

    fn embed_image(&self, image_ref: &str) -> Result<Vec<f64>> {
        let key = fnv64(format!("i\u{0}{image_ref}").as_bytes());
        self.get_or_compute(key, || self.inner.embed_image(image_ref))
    }
}

impl<E: EmbeddingProvider + ?Sized> EmbeddingProvider for &E {
    fn dimension(&self) -> usize {
        (**self).dimension()
    }
    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        (**self).embed_text(text)
    }
    fn embed_image(&self, image_ref: &str) -> Result<Vec<f64>> {
        (**self).embed_image(image_ref)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clients::stub::HashEmbedder;

    #[test]
    fn cosine_identical_is_one() {
        let u = vec![0.3, -0.4, 1.2];
        assert!((cosine(&u, &u).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_orthogonal_is_zero() {
        let u = vec![1.0, 0.0];
        let v = vec![0.0, 1.0];
        assert_eq!(cosine(&u, &v).unwrap(), 0.0);
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn cosine_hand_value() {
        // u=(1,0), v=(1,1): dot=1, |u|=1, |v|=sqrt(2) -> 1/sqrt(2)
        let expected = 1.0 / 2.0_f64.sqrt();
        let got = cosine(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 0.70711).abs() < 5e-6);
    }

    #[test]
    fn cosine_zero_vector_errors() {
        assert!(matches!(
            cosine(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn cosine_dim_mismatch_errors() {
        assert!(matches!(
            cosine(&[1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch { left: 1, right: 2 })
        ));
    }

    #[test]
    fn cache_hits_return_same_vector() {
        let e = CachedEmbedder::new(HashEmbedder::new(16));
        let a = e.embed_text("hello").unwrap();
        let b = e.embed_text("hello").unwrap();
        assert_eq!(a, b);
        assert_eq!(e.len(), 1);
        e.embed_image("hello").unwrap();
        // text and image keyspaces are distinct in the cache
        assert_eq!(e.len(), 2);
    }

    #[test]
    fn cache_concurrent_access() {
        use std::sync::Arc;
        let e = Arc::new(CachedEmbedder::new(HashEmbedder::new(8)));
        let mut handles = Vec::new();
        for t in 0..8 {
            let e = Arc::clone(&e);
            handles.push(std::thread::spawn(move || {
                for i in 0..50 {
                    e.embed_text(&format!("s{}", (i + t) % 20)).unwrap();
                }
            }));
        }
        for h in handles {
            h.join().unwrap();
        }
        assert_eq!(e.len(), 20);
    }

    #[test]
    fn request_validation() {
        let ok = ChatRequest::simple("hi", Some("img://x"));
        assert!(ok.validate().is_ok());
        let bad = ChatRequest {
            messages: vec![Message {
                role: Role::System,
                parts: vec![Part::Text("sys".into())],
            }],
            temperature: 0.0,
            max_tokens: 8,
            seed: None,
        };
        assert!(bad.validate().is_err());
    }
}
