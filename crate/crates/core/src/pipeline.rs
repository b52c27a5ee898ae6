//! Per-query answer pipeline: retrieval, conflict reasoning, correlation,
//! position compression, and adaptive decoding, wired by mode and component
//! toggles.

use serde::{Deserialize, Serialize};

use crate::clients::{ChatClient, EmbeddingProvider};
use crate::config::{Mode, RunConfig};
use crate::corpus::{self, KnowledgeBase, Query, RetrievedContext};
use crate::correlation::{build_profile, CorrelationProfile};
use crate::decoding::{decode_answer, TraceStep};
use crate::error::Result;
use crate::lm::NextTokenLm;
use crate::prompts;
use crate::toylm::{tokenize, PositionMap, Region, TokenTag};
use crate::vccr::{self, ContextUnit};

/// The three model roles a run needs.
pub struct PipelineClients<'a> {
    pub vlm: &'a dyn ChatClient,
    pub embedder: &'a dyn EmbeddingProvider,
    pub lm: &'a dyn NextTokenLm,
}

/// Everything produced while answering one query.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub qid: String,
    pub mode: Mode,
    pub answer: String,
    pub contexts: Vec<RetrievedContext>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_star: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rvis: Option<String>,
    #[serde(skip)]
    pub profile: Option<CorrelationProfile>,
    /// Serialized separately as the per-step trace JSONL.
    #[serde(skip)]
    pub trace: Vec<TraceStep>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_injected: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_already_present: Option<bool>,
}

/// Answer one query. `gt` supplies the ground-truth context for oracle mode.
pub fn answer_query(
    query: &Query,
    kb: &KnowledgeBase,
    clients: &PipelineClients<'_>,
    cfg: &RunConfig,
    gt: Option<&RetrievedContext>,
) -> Result<QueryOutcome> {
    let par = cfg.parallelism();
    let toggles = cfg.effective_toggles();
    let decode_cfg = cfg.decode_config();

    // Base mode: direct answer from the query-only prompt, no retrieval.
    if cfg.mode == Mode::Base {
        let prompt = prompts::direct_answer(&query.question);
        let tokens = tokenize(&prompt);
        let positions = PositionMap::consecutive(tokens.len(), Region::Query);
        let (answer, trace) = decode_answer(
            clients.lm,
            &tokens,
            &positions,
            &tokens,
            0.0,
            &crate::decoding::DecodeConfig {
                cad: false,
                ..decode_cfg
            },
            par,
        )?;
        return Ok(QueryOutcome {
            qid: query.qid.clone(),
            mode: cfg.mode,
            answer,
            contexts: Vec::new(),
            q_star: None,
            rvis: None,
            profile: None,
            trace,
            oracle_injected: None,
            oracle_already_present: None,
        });
    }

    // Retrieval: top-k articles, then top-n sections.
    let entries = corpus::retrieve_top_k(query, kb, cfg.top_k_articles, clients.embedder, par)?;
    let mut contexts =
        corpus::select_sections(&entries, query, cfg.top_sections, clients.embedder, par)?;
    let mut oracle_injected = None;
    let mut oracle_already_present = None;
    if cfg.mode == Mode::Oracle {
        if let Some(gt) = gt {
            let (updated, already) = corpus::oracle_insert(&contexts, gt, cfg.oracle_slot)?;
            contexts = updated;
            oracle_injected = Some(!already);
            oracle_already_present = Some(already);
        }
    }

    // Conflict reasoning: parametric context, rationales, conflict summary.
    let mut units: Vec<ContextUnit> = Vec::with_capacity(contexts.len() + 1);
    let mut rvis = None;
    if toggles.vccr {
        let parametric = vccr::generate_parametric_context(query, clients.vlm)?;
        units.push(ContextUnit::parametric(&parametric));
        units.extend(contexts.iter().map(ContextUnit::retrieved));
        let rationales = vccr::extract_rationales(query, &units, clients.vlm, par)?;
        let summary = vccr::summarize_conflicts(query, &rationales, clients.vlm)?;
        rvis = Some(summary.text);
    } else {
        units.extend(contexts.iter().map(ContextUnit::retrieved));
    }

    // Sentence correlation (needed by compression and adaptive decoding).
    let mut q_star = None;
    let mut profile = None;
    if toggles.cpe || toggles.cad {
        let rewritten = vccr::rewrite_question(query, clients.vlm)?;
        profile = Some(build_profile(
            &units,
            &rewritten,
            &query.image,
            cfg.tau,
            clients.embedder,
            par,
        )?);
        q_star = Some(rewritten);
    }

    // Contextual prompt assembly with per-byte token tags.
    let template = if toggles.vccr {
        prompts::FINAL_ANSWER
    } else {
        prompts::PLAIN_RAG_ANSWER
    };
    let block = retrieved_block(&units, profile.as_ref());
    let built = assemble_prompt(
        template,
        &query.question,
        rvis.as_deref().unwrap_or(""),
        &block,
    );
    let ctx_tokens = tokenize(&built.text);
    let ctx_positions = if toggles.cpe {
        let p = profile.as_ref().expect("profile exists when cpe is on");
        let mut pm = crate::toylm::assign_positions(
            &built.tags,
            p.sentences.len(),
            &p.low_set,
            cfg.cpe_alpha,
            -1.0,
        )?;
        if let Some(scale) = cfg.pi_scale {
            pm.positions = crate::toylm::interpolate_positions(&pm.positions, scale)?;
        }
        pm
    } else {
        PositionMap::consecutive(ctx_tokens.len(), Region::Context)
    };

    // Parametric decoding pass: query-only prompt, standard positions.
    let par_tokens = tokenize(&prompts::direct_answer(&query.question));
    let k_aggregate = profile.as_ref().map_or(0.0, |p| p.k_aggregate);
    let (answer, trace) = decode_answer(
        clients.lm,
        &ctx_tokens,
        &ctx_positions,
        &par_tokens,
        k_aggregate,
        &decode_cfg,
        par,
    )?;

    Ok(QueryOutcome {
        qid: query.qid.clone(),
        mode: cfg.mode,
        answer,
        contexts,
        q_star,
        rvis,
        profile,
        trace,
        oracle_injected,
        oracle_already_present,
    })
}

/// A prompt as text plus one [`TokenTag`] per byte.
pub struct BuiltPrompt {
    pub text: String,
    pub tags: Vec<TokenTag>,
}

impl BuiltPrompt {
    fn push(&mut self, s: &str, tag: TokenTag) {
        self.text.push_str(s);
        self.tags.extend(std::iter::repeat_n(tag, s.len()));
    }
}

/// The retrieved-information block as tagged pieces: each sentence carries
/// its global index; sentences within a context join with a space, contexts
/// join with a newline. Without a profile the block is untagged context
/// text (positions are consecutive in that case).
fn retrieved_block(
    units: &[ContextUnit],
    profile: Option<&CorrelationProfile>,
) -> Vec<(String, TokenTag)> {
    match profile {
        Some(p) => {
            let mut pieces: Vec<(String, TokenTag)> = Vec::new();
            for (ui, unit) in units.iter().enumerate() {
                let sentences: Vec<&crate::correlation::ScoredSentence> = p
                    .sentences
                    .iter()
                    .filter(|s| s.context_id == unit.context_id)
                    .collect();
                for (si, s) in sentences.iter().enumerate() {
                    let mut text = s.text.clone();
                    if si + 1 < sentences.len() {
                        text.push(' ');
                    } else if ui + 1 < units.len() {
                        text.push('\n');
                    }
                    pieces.push((text, TokenTag::Sentence(s.global_index)));
                }
            }
            pieces
        }
        None => units
            .iter()
            .enumerate()
            .map(|(ui, u)| {
                let mut text = u.text.clone();
                if ui + 1 < units.len() {
                    text.push('\n');
                }
                (text, TokenTag::Query)
            })
            .collect(),
    }
}

/// Fill a template, tagging literal text and the question as query bytes,
/// the features substitution as focus-hint bytes, and the retrieved block
/// with its sentence tags.
fn assemble_prompt(
    template: &str,
    question: &str,
    features: &str,
    block: &[(String, TokenTag)],
) -> BuiltPrompt {
    let mut built = BuiltPrompt {
        text: String::new(),
        tags: Vec::new(),
    };
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        let Some(close) = rest[start..].find('}') else {
            break;
        };
        let end = start + close;
        built.push(&rest[..start], TokenTag::Query);
        match &rest[start..=end] {
            "{Question}" => built.push(question, TokenTag::Query),
            "{Features}" => built.push(features, TokenTag::Rvis),
            "{Retrieved Information}" => {
                for (text, tag) in block {
                    built.push(text, *tag);
                }
            }
            other => built.push(other, TokenTag::Query),
        }
        rest = &rest[end + 1..];
    }
    built.push(rest, TokenTag::Query);
    built
}
