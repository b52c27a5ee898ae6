//! Conflict- and correlation-aware retrieval-augmented VQA engine.
//!
//! The engine answers knowledge-based visual questions by retrieving entity
//! articles, reasoning about conflicts between the model's parametric beliefs
//! and the retrieved contexts, and generating the answer with two
//! correlation-guided mechanisms:
//!
//! - **conflict reasoning** ([`vccr`]): externalize the model's own belief as a
//!   parametric context, extract a visual rationale per context, and summarize
//!   the conflicting evidence into a focus hint.
//! - **correlation scoring** ([`correlation`]): score every context sentence
//!   against the rewritten question and the query image, select the
//!   low-correlation tail, and aggregate the profile into a scalar `K`.
//! - **positional compression** ([`toylm`]): low-correlation sentences advance
//!   rotary positions by `alpha < 1` instead of `1`, shrinking their share of
//!   the positional space.
//! - **adaptive contrastive decoding** ([`decoding`]): blend contextual and
//!   parametric token distributions with a conflict score built from their
//!   divergence, entropy gap, and `K`.
//!
//! Model roles (chat VLM, text/image embedder) are pluggable: live HTTP
//! clients or deterministic scripted stubs ([`clients`]). The decoder is a
//! small from-scratch rotary-embedding transformer that accepts real-valued
//! per-token positions ([`toylm`]).

pub mod clients;
pub mod config;
pub mod corpus;
pub mod correlation;
pub mod decoding;
pub mod detmath;
pub mod error;
pub mod eval;
pub mod exec;
pub mod lm;
pub mod pipeline;
pub mod prompts;
pub mod stub_suite;
pub mod toylm;
pub mod vccr;

pub use config::RunConfig;
pub use error::{Error, Result};
