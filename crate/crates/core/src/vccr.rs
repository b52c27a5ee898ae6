//! Conflict reasoning across parametric and retrieved contexts.
//!
//! Externalizes the chat model's own belief as a parametric context, extracts
//! a visual rationale for every context, and summarizes the conflicting
//! evidence into a single focus hint that later stages attend to.

use serde::{Deserialize, Serialize};

use crate::clients::{ChatClient, ChatRequest};
use crate::corpus::{Query, RetrievedContext};
use crate::error::{Error, Result};
use crate::exec::{map_ordered, Parallelism};
use crate::prompts;

/// Context id given to the externalized parametric context.
pub const PARAMETRIC_CONTEXT_ID: &str = "parametric";

/// The model's own background knowledge for a query, generated before any
/// retrieved context is shown to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParametricContext {
    pub text: String,
}

/// A context of either provenance, as consumed by rationale extraction,
/// correlation scoring, and prompt assembly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextUnit {
    pub context_id: String,
    pub text: String,
}

impl ContextUnit {
    pub fn parametric(p: &ParametricContext) -> Self {
        ContextUnit {
            context_id: PARAMETRIC_CONTEXT_ID.to_string(),
            text: p.text.clone(),
        }
    }

    pub fn retrieved(c: &RetrievedContext) -> Self {
        ContextUnit {
            context_id: c.context_id.clone(),
            text: c.text.clone(),
        }
    }
}

/// Per-context visual rationale. `reason` is the content of the first
/// reasoning tag pair; when no pair parses, the full response is kept and the
/// record is flagged degraded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationaleRecord {
    pub context_id: String,
    pub raw_response: String,
    pub reason: String,
    pub degraded: bool,
}

/// Summary of the conflicting visual evidence across all rationales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictSummary {
    pub text: String,
    pub source_rationales: Vec<String>,
    pub degraded: bool,
}

/// Content of the first `<tag>...</tag>` pair, trimmed.
pub fn parse_tagged<'a>(text: &'a str, tag: &'static str) -> Result<&'a str> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = text.find(&open).ok_or(Error::MissingTag { tag })? + open.len();
    let end = text[start..]
        .find(&close)
        .ok_or(Error::MissingTag { tag })?;
    Ok(text[start..start + end].trim())
}

pub fn parse_reason_tags(text: &str) -> Result<&str> {
    parse_tagged(text, "reason")
}

/// Ask the model to describe the image from its own knowledge, yielding the
/// parametric context.
pub fn generate_parametric_context(
    query: &Query,
    vlm: &dyn ChatClient,
) -> Result<ParametricContext> {
    let prompt = prompts::parametric(&query.question);
    let text = vlm.chat(&ChatRequest::simple(prompt, Some(&query.image)))?;
    if text.trim().is_empty() {
        return Err(Error::EmptyResponse);
    }
    Ok(ParametricContext { text })
}

/// Rewrite the question into a disambiguated form. Falls back to the
/// original question (with a warning) when the reply carries no question tag.
pub fn rewrite_question(query: &Query, vlm: &dyn ChatClient) -> Result<String> {
    let prompt = prompts::rewrite(&query.question);
    let reply = vlm.chat(&ChatRequest::simple(prompt, Some(&query.image)))?;
    match parse_tagged(&reply, "question") {
        Ok(q) if !q.is_empty() => Ok(q.to_string()),
        _ => {
            log::warn!(
                "no <question> tag in rewrite reply for '{}'; keeping original",
                query.qid
            );
            Ok(query.question.clone())
        }
    }
}

/// Extract the visual rationale for one context.
pub fn extract_rationale(
    query: &Query,
    context: &ContextUnit,
    vlm: &dyn ChatClient,
) -> Result<RationaleRecord> {
    if context.text.is_empty() {
        return Err(Error::EmptyInput("context text"));
    }
    let prompt = prompts::rationale(&query.question, &context.text);
    let raw = vlm.chat(&ChatRequest::simple(prompt, Some(&query.image)))?;
    let (reason, degraded) = match parse_reason_tags(&raw) {
        Ok(r) => (r.to_string(), false),
        Err(_) => (raw.clone(), true),
    };
    Ok(RationaleRecord {
        context_id: context.context_id.clone(),
        raw_response: raw,
        reason,
        degraded,
    })
}

/// Extract rationales for every context; independent calls may run
/// concurrently.
pub fn extract_rationales(
    query: &Query,
    contexts: &[ContextUnit],
    vlm: &dyn ChatClient,
    mode: Parallelism,
) -> Result<Vec<RationaleRecord>> {
    map_ordered(mode, contexts, |c| extract_rationale(query, c, vlm))
        .into_iter()
        .collect()
}

/// Summarize all rationales into the conflict focus hint. Reasons are joined
/// newline-separated in context order (parametric first, then retrieval
/// rank).
pub fn summarize_conflicts(
    query: &Query,
    rationales: &[RationaleRecord],
    vlm: &dyn ChatClient,
) -> Result<ConflictSummary> {
    if rationales.is_empty() {
        return Err(Error::EmptyInput("rationales"));
    }
    let reasons_text = rationales
        .iter()
        .map(|r| r.reason.as_str())
        .collect::<Vec<_>>()
        .join("\n");
    let prompt = prompts::conflict_analysis(&query.question, &reasons_text);
    let raw = vlm.chat(&ChatRequest::simple(prompt, Some(&query.image)))?;
    let (text, degraded) = match parse_reason_tags(&raw) {
        Ok(r) => (r.to_string(), false),
        Err(_) => (raw.clone(), true),
    };
    Ok(ConflictSummary {
        text,
        source_rationales: rationales.iter().map(|r| r.context_id.clone()).collect(),
        degraded,
    })
}
