//! Run configuration. Defaults are the shipped settings: tau 0.75,
//! compression alpha 0.5, conflict bias 0.1, top-20 articles, top-3 sections.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decoding::DecodeConfig;
use crate::error::{Error, Result};
use crate::exec::Parallelism;
use crate::toylm::ToyLmConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Direct answering from the model alone, no retrieval.
    Base,
    /// Vanilla retrieval augmentation: conflict reasoning, compression, and
    /// adaptive decoding all off.
    Rag,
    /// The full pipeline (subject to the individual component toggles).
    Ccvqa,
    /// Full pipeline with the ground-truth section force-inserted into the
    /// retrieved contexts.
    Oracle,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Mode::Base => "base",
            Mode::Rag => "rag",
            Mode::Ccvqa => "ccvqa",
            Mode::Oracle => "oracle",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Mode::Base),
            "rag" => Ok(Mode::Rag),
            "ccvqa" => Ok(Mode::Ccvqa),
            "oracle" => Ok(Mode::Oracle),
            other => Err(Error::Config(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringRule {
    /// Normalized exact match (lowercase, strip articles, collapse
    /// whitespace, strip terminal punctuation).
    ExactRelaxed,
    /// Multi-annotator soft accuracy min(matches / 3, 1).
    VqaSoft,
}

/// Endpoints and transport settings for the live clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClientConfig {
    pub chat_endpoint: String,
    pub chat_model: String,
    pub embed_endpoint: String,
    pub embed_model: String,
    pub embed_dim: usize,
    pub max_retries: usize,
    pub timeout_secs: u64,
    pub rate_limit: Option<f64>,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            chat_endpoint: String::new(),
            chat_model: "default-vlm".into(),
            embed_endpoint: String::new(),
            embed_model: "default-embedder".into(),
            embed_dim: 32,
            max_retries: 3,
            timeout_secs: 60,
            rate_limit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub mode: Mode,
    /// Fraction of sentences (bottom of the correlation ranking) whose
    /// positions are compressed.
    pub tau: f64,
    /// Position increment for compressed tokens.
    pub cpe_alpha: f64,
    /// Bias term inside the conflict-score sigmoid.
    pub delta: f64,
    /// Optional position-interpolation divisor (> 1); distinct from
    /// `cpe_alpha`.
    pub pi_scale: Option<f64>,
    pub top_k_articles: usize,
    pub top_sections: usize,
    pub vccr: bool,
    pub cpe: bool,
    pub cad: bool,
    pub seed: u64,
    /// 0 = scheduler default pool, 1 = sequential, n = pool of n.
    pub workers: usize,
    pub max_tokens: usize,
    pub temperature: f64,
    pub scoring_rule: ScoringRule,
    /// Accept numeric answers within +/-10% of a numeric gold.
    pub numeric_tolerance: bool,
    /// 1-based rank replaced by the ground truth in oracle mode.
    pub oracle_slot: usize,
    /// Use the built-in scripted clients instead of live HTTP.
    pub stub: bool,
    pub clients: ClientConfig,
    pub lm: ToyLmConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::Ccvqa,
            tau: 0.75,
            cpe_alpha: 0.5,
            delta: 0.1,
            pi_scale: None,
            top_k_articles: 20,
            top_sections: 3,
            vccr: true,
            cpe: true,
            cad: true,
            seed: 42,
            workers: 0,
            max_tokens: 64,
            temperature: 0.0,
            scoring_rule: ScoringRule::ExactRelaxed,
            numeric_tolerance: false,
            oracle_slot: crate::corpus::DEFAULT_ORACLE_SLOT,
            stub: false,
            clients: ClientConfig::default(),
            lm: ToyLmConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau must be in [0, 1], got {}", self.tau)));
        }
        if !(self.cpe_alpha > 0.0 && self.cpe_alpha <= 1.0) {
            return Err(Error::Config(format!(
                "cpe_alpha must be in (0, 1], got {}",
                self.cpe_alpha
            )));
        }
        if let Some(s) = self.pi_scale {
            if s.is_nan() || s <= 1.0 {
                return Err(Error::Config(format!("pi_scale must be > 1, got {s}")));
            }
        }
        if self.top_k_articles == 0 || self.top_sections == 0 {
            return Err(Error::Config(
                "top_k_articles and top_sections must be >= 1".into(),
            ));
        }
        if self.oracle_slot == 0 {
            return Err(Error::Config("oracle_slot is 1-based".into()));
        }
        self.lm.validate().map_err(|e| Error::Config(e.to_string()))
    }

    /// Load from a TOML or JSON file (decided by extension).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parallelism(&self) -> Parallelism {
        Parallelism::from_workers(self.workers)
    }

    /// Component toggles after applying the mode: `base` and `rag` force
    /// everything off; `ccvqa`/`oracle` honor the individual flags.
    pub fn effective_toggles(&self) -> Toggles {
        match self.mode {
            Mode::Base | Mode::Rag => Toggles {
                vccr: false,
                cpe: false,
                cad: false,
            },
            Mode::Ccvqa | Mode::Oracle => Toggles {
                vccr: self.vccr,
                cpe: self.cpe,
                cad: self.cad,
            },
        }
    }

    pub fn decode_config(&self) -> DecodeConfig {
        DecodeConfig {
            max_tokens: self.max_tokens,
            delta: self.delta,
            eos: crate::toylm::EOS_TOKEN,
            temperature: self.temperature,
            seed: self.seed,
            cad: self.effective_toggles().cad,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Toggles {
    pub vccr: bool,
    pub cpe: bool,
    pub cad: bool,
}
