//! Adaptive contrastive decoding.
//!
//! Per step, the contextual pass (contexts + focus hint, compressed
//! positions) and the parametric pass (query only, standard positions) each
//! produce a token distribution. Their normalized Jensen-Shannon divergence,
//! entropy gap, the per-query correlation aggregate `K`, and a small bias
//! feed a sigmoid conflict score `s'`, which weights the contrastive blend
//! `softmax((1 + s') z_c - s' z_m)`.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{join2, Parallelism};
use crate::lm::NextTokenLm;
use crate::toylm::{detokenize, PositionMap, Region, EOS_TOKEN};

/// Probabilities below this are treated as zero inside entropy and KL terms.
const PROB_FLOOR: f64 = 1e-12;

/// A valid probability vector over the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDistribution {
    probs: Vec<f64>,
}

impl TokenDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::EmptyInput("probabilities"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::NonFinite("probabilities"));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Param(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(TokenDistribution { probs })
    }

    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        Ok(TokenDistribution {
            probs: softmax(logits)?,
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Index of the largest probability; the lowest index wins ties.
    pub fn argmax(&self) -> u32 {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best as u32
    }
}

/// Numerically safe softmax (max-subtracted exponentials).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::EmptyInput("logits"));
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Shannon entropy in nats; terms with p <= 1e-12 contribute zero.
pub fn entropy(probs: &[f64]) -> f64 {
    probs
        .iter()
        .filter(|&&p| p > PROB_FLOOR)
        .map(|&p| -p * p.ln())
        .sum()
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > PROB_FLOOR)
        .map(|(&pi, &qi)| pi * (pi.ln() - qi.ln()))
        .sum()
}

/// Jensen-Shannon divergence normalized by ln 2, so the result lies in
/// [0, 1]. Symmetric; zero exactly on identical inputs; one on disjoint
/// point masses.
pub fn divergence(p_c: &TokenDistribution, p_m: &TokenDistribution) -> Result<f64> {
    if p_c.len() != p_m.len() {
        return Err(Error::DimensionMismatch {
            left: p_c.len(),
            right: p_m.len(),
        });
    }
    let mid: Vec<f64> = p_c
        .probs()
        .iter()
        .zip(p_m.probs())
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    let js = 0.5 * kl(p_c.probs(), &mid) + 0.5 * kl(p_m.probs(), &mid);
    Ok(js / std::f64::consts::LN_2)
}

/// Normalized entropy gap (H(p_m) - H(p_c)) / ln V, in [-1, 1]. Positive
/// when the parametric distribution is the less confident one.
pub fn entropy_gap(p_c: &TokenDistribution, p_m: &TokenDistribution) -> Result<f64> {
    if p_c.len() != p_m.len() {
        return Err(Error::DimensionMismatch {
            left: p_c.len(),
            right: p_m.len(),
        });
    }
    if p_c.len() < 2 {
        return Err(Error::Param("entropy gap needs vocab size >= 2".into()));
    }
    Ok((entropy(p_m.probs()) - entropy(p_c.probs())) / (p_c.len() as f64).ln())
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Conflict score sigma(D + dH + K + delta), in (0, 1).
pub fn conflict_score(d: f64, dh: f64, k: f64, delta: f64) -> f64 {
    sigmoid(d + dh + k + delta)
}

/// Per-step conflict signals; `s_prime` is exactly
/// `sigmoid(d + dh + k + delta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConflictSignals {
    pub d: f64,
    pub dh: f64,
    pub k: f64,
    pub delta: f64,
    pub s_prime: f64,
}

impl ConflictSignals {
    pub fn new(d: f64, dh: f64, k: f64, delta: f64) -> Self {
        ConflictSignals {
            d,
            dh,
            k,
            delta,
            s_prime: conflict_score(d, dh, k, delta),
        }
    }
}

/// Contrastive blend softmax((1 + s') z_c - s' z_m).
pub fn blend(logits_c: &[f64], logits_m: &[f64], s_prime: f64) -> Result<TokenDistribution> {
    if logits_c.len() != logits_m.len() {
        return Err(Error::DimensionMismatch {
            left: logits_c.len(),
            right: logits_m.len(),
        });
    }
    if !(0.0..1.0).contains(&s_prime) {
        return Err(Error::Param(format!("s' must be in [0, 1), got {s_prime}")));
    }
    let mixed: Vec<f64> = logits_c
        .iter()
        .zip(logits_m)
        .map(|(c, m)| (1.0 + s_prime) * c - s_prime * m)
        .collect();
    TokenDistribution::from_logits(&mixed)
}

/// One trace record per decoding step:
/// `{"step", "D", "dH", "K", "s_prime", "token_id"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(rename = "dH")]
    pub dh: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub s_prime: f64,
    pub token_id: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeConfig {
    pub max_tokens: usize,
    pub delta: f64,
    pub eos: u32,
    /// 0 = greedy; otherwise temperature sampling with the fixed seed.
    pub temperature: f64,
    pub seed: u64,
    /// When false the parametric pass is skipped and decoding is pure
    /// contextual greedy (trace signals are zero, s' = sigma(0)).
    pub cad: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            max_tokens: 64,
            delta: 0.1,
            eos: EOS_TOKEN,
            temperature: 0.0,
            seed: 42,
            cad: true,
        }
    }
}

/// Greedy decode with per-step adaptive blending. Both passes end at the
/// same generation point; each emitted token is appended to both, the
/// contextual pass continuing its position map with +1 increments and the
/// parametric pass on standard integer positions. `K` is fixed for the whole
/// query. Stops at EOS (recorded in the trace) or `max_tokens`.
pub fn decode_answer(
    lm: &dyn NextTokenLm,
    ctx_tokens: &[u32],
    ctx_positions: &PositionMap,
    par_tokens: &[u32],
    k_aggregate: f64,
    cfg: &DecodeConfig,
    mode: Parallelism,
) -> Result<(String, Vec<TraceStep>)> {
    let mut ctx_tokens = ctx_tokens.to_vec();
    let mut ctx_positions = ctx_positions.clone();
    let mut par_tokens = par_tokens.to_vec();
    let mut par_positions = PositionMap::consecutive(par_tokens.len(), Region::Query);
    let mut generated: Vec<u32> = Vec::new();
    let mut trace: Vec<TraceStep> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    for step in 0..cfg.max_tokens {
        let (dist, signals) = if cfg.cad {
            let (logits_c, logits_m) = join2(
                mode,
                || lm.next_logits(&ctx_tokens, &ctx_positions),
                || lm.next_logits(&par_tokens, &par_positions),
            );
            let (logits_c, logits_m) = (logits_c?, logits_m?);
            let p_c = TokenDistribution::from_logits(&logits_c)?;
            let p_m = TokenDistribution::from_logits(&logits_m)?;
            let d = divergence(&p_c, &p_m)?;
            let dh = entropy_gap(&p_c, &p_m)?;
            let signals = ConflictSignals::new(d, dh, k_aggregate, cfg.delta);
            (blend(&logits_c, &logits_m, signals.s_prime)?, signals)
        } else {
            let logits_c = lm.next_logits(&ctx_tokens, &ctx_positions)?;
            (
                TokenDistribution::from_logits(&logits_c)?,
                ConflictSignals::new(0.0, 0.0, 0.0, 0.0),
            )
        };
        let token = if cfg.temperature == 0.0 {
            dist.argmax()
        } else {
            sample(&dist, cfg.temperature, &mut rng)
        };
        trace.push(TraceStep {
            step,
            d: signals.d,
            dh: signals.dh,
            k: signals.k,
            s_prime: signals.s_prime,
            token_id: token,
        });
        if token == cfg.eos {
            break;
        }
        generated.push(token);
        ctx_tokens.push(token);
        ctx_positions.push_generated();
        par_tokens.push(token);
        par_positions.push_generated();
    }
    Ok((detokenize(&generated), trace))
}

fn sample(dist: &TokenDistribution, temperature: f64, rng: &mut ChaCha8Rng) -> u32 {
    let weights: Vec<f64> = dist
        .probs()
        .iter()
        .map(|&p| if p > 0.0 { p.powf(1.0 / temperature) } else { 0.0 })
        .collect();
    let total: f64 = weights.iter().sum();
    let mut u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 * total;
    for (i, w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return i as u32;
        }
    }
    (weights.len() - 1) as u32
}
