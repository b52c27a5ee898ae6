//! A small from-scratch autoregressive decoder with rotary position
//! embeddings over real-valued per-token positions.
//!
//! Byte-level vocabulary (0..=255) plus an end-of-sequence token. The model
//! is deliberately tiny — the mechanism under study is fractional-position
//! rotary encoding and logits-level decoding, not generation quality — and
//! every forward pass is bit-reproducible: weights come from a seeded
//! ChaCha stream via exact mantissa arithmetic and all transcendentals go
//! through [`crate::detmath`].

pub mod positions;
pub mod rope;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detmath;
use crate::error::{Error, Result};
pub use positions::{assign_positions, PositionMap, Region, TokenTag};
pub use rope::{interpolate_positions, rope_rotate};

/// End-of-sequence token id, one past the byte range.
pub const EOS_TOKEN: u32 = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyLmConfig {
    pub vocab_size: usize,
    pub model_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub seed: u64,
    pub rope_base: f64,
}

impl Default for ToyLmConfig {
    fn default() -> Self {
        ToyLmConfig {
            vocab_size: 257,
            model_dim: 64,
            layers: 2,
            heads: 2,
            seed: 42,
            rope_base: 10000.0,
        }
    }
}

impl ToyLmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.layers == 0 || self.heads == 0 {
            return Err(Error::Param("vocab/layers/heads must be positive".into()));
        }
        if self.model_dim == 0 || !self.model_dim.is_multiple_of(2 * self.heads) {
            return Err(Error::Param(format!(
                "model_dim {} must be divisible by 2*heads ({})",
                self.model_dim,
                2 * self.heads
            )));
        }
        if self.rope_base <= 0.0 {
            return Err(Error::Param("rope_base must be > 0".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }
}

/// Byte-level tokenization.
pub fn tokenize(text: &str) -> Vec<u32> {
    text.bytes().map(u32::from).collect()
}

/// Decode byte tokens back to text; non-byte ids (e.g. EOS) are dropped.
pub fn detokenize(tokens: &[u32]) -> String {
    let bytes: Vec<u8> = tokens
        .iter()
        .filter(|&&t| t < 256)
        .map(|&t| t as u8)
        .collect();
    String::from_utf8_lossy(&bytes).into_owned()
}

struct LayerW {
    ln1: Vec<f32>,
    wq: Vec<f32>,
    wk: Vec<f32>,
    wv: Vec<f32>,
    wo: Vec<f32>,
    ln2: Vec<f32>,
    w1: Vec<f32>,
    w2: Vec<f32>,
}

pub struct ToyLm {
    cfg: ToyLmConfig,
    embed: Vec<f32>,
    layers: Vec<LayerW>,
    ln_f: Vec<f32>,
    unembed: Vec<f32>,
    head_freqs: Vec<f64>,
}

const INIT_SCALE: f32 = 0.08;

fn draw(rng: &mut ChaCha8Rng, n: usize, scale: f32) -> Vec<f32> {
    // 24-bit mantissa draws: exact IEEE arithmetic, identical on every
    // platform.
    (0..n)
        .map(|_| ((rng.next_u32() >> 8) as f32 / (1u32 << 24) as f32 * 2.0 - 1.0) * scale)
        .collect()
}

impl ToyLm {
    /// Random weights drawn from the config seed.
    pub fn new(cfg: ToyLmConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.model_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let embed = draw(&mut rng, cfg.vocab_size * d, INIT_SCALE);
        let mut layers = Vec::with_capacity(cfg.layers);
        for _ in 0..cfg.layers {
            layers.push(LayerW {
                ln1: vec![1.0; d],
                wq: draw(&mut rng, d * d, INIT_SCALE),
                wk: draw(&mut rng, d * d, INIT_SCALE),
                wv: draw(&mut rng, d * d, INIT_SCALE),
                wo: draw(&mut rng, d * d, INIT_SCALE),
                ln2: vec![1.0; d],
                w1: draw(&mut rng, 4 * d * d, INIT_SCALE),
                w2: draw(&mut rng, d * 4 * d, INIT_SCALE),
            });
        }
        let ln_f = vec![1.0; d];
        let unembed = draw(&mut rng, cfg.vocab_size * d, INIT_SCALE);
        let head_freqs = rope::frequencies(cfg.head_dim(), cfg.rope_base)?;
        Ok(ToyLm {
            cfg,
            embed,
            layers,
            ln_f,
            unembed,
            head_freqs,
        })
    }

    pub fn config(&self) -> &ToyLmConfig {
        &self.cfg
    }

    /// Next-token logits for the sequence under the given position map.
    /// Deterministic: identical inputs give bit-identical logits.
    pub fn forward(&self, tokens: &[u32], posmap: &PositionMap) -> Result<Vec<f64>> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput("tokens"));
        }
        if tokens.len() != posmap.len() {
            return Err(Error::Shape(format!(
                "{} tokens vs {} positions",
                tokens.len(),
                posmap.len()
            )));
        }
        let d = self.cfg.model_dim;
        let v = self.cfg.vocab_size;
        for &t in tokens {
            if t as usize >= v {
                return Err(Error::Vocab { id: t, vocab: v });
            }
        }
        let t_len = tokens.len();
        // token embeddings
        let mut x: Vec<Vec<f64>> = tokens
            .iter()
            .map(|&t| {
                let row = &self.embed[t as usize * d..(t as usize + 1) * d];
                row.iter().map(|&w| w as f64).collect()
            })
            .collect();

        let heads = self.cfg.heads;
        let hd = self.cfg.head_dim();
        let inv_sqrt_hd = 1.0 / (hd as f64).sqrt();

        for layer in &self.layers {
            // attention block
            let xn: Vec<Vec<f64>> = x.iter().map(|r| rmsnorm(r, &layer.ln1)).collect();
            let mut q: Vec<Vec<f64>> = Vec::with_capacity(t_len);
            let mut k: Vec<Vec<f64>> = Vec::with_capacity(t_len);
            let mut val: Vec<Vec<f64>> = Vec::with_capacity(t_len);
            for (t, row) in xn.iter().enumerate() {
                let mut qt = matvec(&layer.wq, d, d, row);
                let mut kt = matvec(&layer.wk, d, d, row);
                let vt = matvec(&layer.wv, d, d, row);
                let m = posmap.positions[t];
                for h in 0..heads {
                    let s = h * hd;
                    let rq = rope::rotate_with(&qt[s..s + hd], m, &self.head_freqs);
                    qt[s..s + hd].copy_from_slice(&rq);
                    let rk = rope::rotate_with(&kt[s..s + hd], m, &self.head_freqs);
                    kt[s..s + hd].copy_from_slice(&rk);
                }
                q.push(qt);
                k.push(kt);
                val.push(vt);
            }
            for t in 0..t_len {
                let mut attn_out = vec![0.0f64; d];
                for h in 0..heads {
                    let s = h * hd;
                    // causal scores over u <= t
                    let mut scores = Vec::with_capacity(t + 1);
                    for kt in k.iter().take(t + 1) {
                        let dot: f64 = q[t][s..s + hd]
                            .iter()
                            .zip(&kt[s..s + hd])
                            .map(|(a, b)| a * b)
                            .sum();
                        scores.push(dot * inv_sqrt_hd);
                    }
                    let weights = det_softmax(&scores);
                    for (u, w) in weights.iter().enumerate() {
                        for i in 0..hd {
                            attn_out[s + i] += w * val[u][s + i];
                        }
                    }
                }
                let proj = matvec(&layer.wo, d, d, &attn_out);
                for i in 0..d {
                    x[t][i] += proj[i];
                }
            }
            // mlp block
            for row in x.iter_mut() {
                let xn = rmsnorm(row, &layer.ln2);
                let mut hidden = matvec(&layer.w1, 4 * d, d, &xn);
                for hv in hidden.iter_mut() {
                    *hv = silu(*hv);
                }
                let out = matvec(&layer.w2, d, 4 * d, &hidden);
                for i in 0..d {
                    row[i] += out[i];
                }
            }
        }
        let last = rmsnorm(&x[t_len - 1], &self.ln_f);
        let logits = matvec(&self.unembed, v, d, &last);
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite("logits"));
        }
        Ok(logits)
    }
}

fn matvec(w: &[f32], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    let mut y = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = 0.0f64;
        for (wi, xi) in row.iter().zip(x) {
            acc += *wi as f64 * xi;
        }
        y.push(acc);
    }
    y
}

fn rmsnorm(x: &[f64], gain: &[f32]) -> Vec<f64> {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let inv = 1.0 / (ms + 1e-6).sqrt();
    x.iter()
        .zip(gain)
        .map(|(v, g)| v * inv * *g as f64)
        .collect()
}

fn det_softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&s| detmath::exp(s - max)).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn silu(x: f64) -> f64 {
    x / (1.0 + detmath::exp(-x))
}

// ---- weight snapshots -------------------------------------------------
//
// Flat little-endian f32 binary plus a JSON sidecar (`<path>.json`) listing
// tensor names, shapes, and byte offsets.

#[derive(Debug, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    byte_order: String,
    dtype: String,
    config: ToyLmConfig,
    tensors: Vec<TensorMeta>,
}

impl ToyLm {
    fn tensor_views(&self) -> Vec<(String, Vec<usize>, &[f32])> {
        let d = self.cfg.model_dim;
        let v = self.cfg.vocab_size;
        let mut out: Vec<(String, Vec<usize>, &[f32])> =
            vec![("embed".into(), vec![v, d], &self.embed)];
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("layers.{l}.ln1"), vec![d], &layer.ln1));
            out.push((format!("layers.{l}.attn.wq"), vec![d, d], &layer.wq));
            out.push((format!("layers.{l}.attn.wk"), vec![d, d], &layer.wk));
            out.push((format!("layers.{l}.attn.wv"), vec![d, d], &layer.wv));
            out.push((format!("layers.{l}.attn.wo"), vec![d, d], &layer.wo));
            out.push((format!("layers.{l}.ln2"), vec![d], &layer.ln2));
            out.push((format!("layers.{l}.mlp.w1"), vec![4 * d, d], &layer.w1));
            out.push((format!("layers.{l}.mlp.w2"), vec![d, 4 * d], &layer.w2));
        }
        out.push(("ln_f".into(), vec![d], &self.ln_f));
        out.push(("unembed".into(), vec![v, d], &self.unembed));
        out
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let mut blob: Vec<u8> = Vec::new();
        let mut metas = Vec::new();
        for (name, shape, data) in self.tensor_views() {
            metas.push(TensorMeta {
                name,
                shape,
                offset: blob.len(),
            });
            for f in data {
                blob.extend_from_slice(&f.to_le_bytes());
            }
        }
        std::fs::write(path, &blob).map_err(|e| Error::io(path, e))?;
        let sidecar = Sidecar {
            byte_order: "little".into(),
            dtype: "f32".into(),
            config: self.cfg,
            tensors: metas,
        };
        let sidecar_path = sidecar_path(path);
        let json = serde_json::to_string_pretty(&sidecar)
            .map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(&sidecar_path, json).map_err(|e| Error::io(sidecar_path, e))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let blob = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let sidecar_path = sidecar_path(path);
        let json =
            std::fs::read_to_string(&sidecar_path).map_err(|e| Error::io(&sidecar_path, e))?;
        let sidecar: Sidecar =
            serde_json::from_str(&json).map_err(|e| Error::Config(e.to_string()))?;
        let mut lm = ToyLm::new(sidecar.config)?;
        let expected = lm.tensor_views();
        if expected.len() != sidecar.tensors.len() {
            return Err(Error::Config(format!(
                "snapshot has {} tensors, model needs {}",
                sidecar.tensors.len(),
                expected.len()
            )));
        }
        let mut loaded: Vec<Vec<f32>> = Vec::with_capacity(sidecar.tensors.len());
        for ((name, shape, _), meta) in expected.iter().zip(&sidecar.tensors) {
            if *name != meta.name || *shape != meta.shape {
                return Err(Error::Config(format!(
                    "tensor mismatch: expected {name} {shape:?}, found {} {:?}",
                    meta.name, meta.shape
                )));
            }
            let count: usize = shape.iter().product();
            let end = meta.offset + count * 4;
            if end > blob.len() {
                return Err(Error::Config(format!("tensor {name} runs past snapshot end")));
            }
            loaded.push(
                blob[meta.offset..end]
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect(),
            );
        }
        let mut it = loaded.into_iter();
        lm.embed = it.next().unwrap();
        for layer in &mut lm.layers {
            layer.ln1 = it.next().unwrap();
            layer.wq = it.next().unwrap();
            layer.wk = it.next().unwrap();
            layer.wv = it.next().unwrap();
            layer.wo = it.next().unwrap();
            layer.ln2 = it.next().unwrap();
            layer.w1 = it.next().unwrap();
            layer.w2 = it.next().unwrap();
        }
        lm.ln_f = it.next().unwrap();
        lm.unembed = it.next().unwrap();
        Ok(lm)
    }
}

fn sidecar_path(path: &std::path::Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".json");
    std::path::PathBuf::from(s)
}
