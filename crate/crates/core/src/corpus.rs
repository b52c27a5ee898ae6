//! Knowledge corpus: entity articles, query sets, retrieval, and oracle
//! injection.
//!
//! A knowledge base is a JSONL file, one entity per line:
//! `{"entity_id", "title", "sections": [{"id", "text"}], "image",
//! "image_embedding"?}`. Queries are JSONL
//! `{"qid", "image", "question", "answers"}`. Retrieval is an exact cosine
//! scan over image embeddings, then section selection by question-text
//! similarity.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clients::{cosine, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::exec::{map_ordered, Parallelism};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub id: String,
    pub text: String,
}

/// An entity article with an associated image reference and optional
/// precomputed image embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeEntry {
    pub entity_id: String,
    pub title: String,
    pub sections: Vec<Section>,
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_embedding: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub qid: String,
    pub image: String,
    pub question: String,
    #[serde(default)]
    pub answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_tag: Option<String>,
}

/// A selected section of a retrieved article, carrying its similarity score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedContext {
    pub context_id: String,
    pub entity_id: String,
    pub section_id: String,
    pub text: String,
    pub retrieval_score: f64,
}

#[derive(Debug, Clone, Default)]
pub struct KnowledgeBase {
    entries: Vec<KnowledgeEntry>,
}

impl KnowledgeBase {
    /// Build from entries, enforcing unique ids, non-empty sections, and a
    /// single embedding dimension across the base.
    pub fn new(entries: Vec<KnowledgeEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut dim: Option<usize> = None;
        for e in &entries {
            if !seen.insert(e.entity_id.clone()) {
                return Err(Error::DuplicateEntity(e.entity_id.clone()));
            }
            if e.sections.is_empty() {
                return Err(Error::Param(format!(
                    "entity '{}' has no sections",
                    e.entity_id
                )));
            }
            if e.sections.iter().any(|s| s.text.is_empty()) {
                return Err(Error::Param(format!(
                    "entity '{}' has an empty section",
                    e.entity_id
                )));
            }
            if let Some(emb) = &e.image_embedding {
                match dim {
                    None => dim = Some(emb.len()),
                    Some(d) if d != emb.len() => {
                        return Err(Error::DimensionMismatch {
                            left: d,
                            right: emb.len(),
                        })
                    }
                    _ => {}
                }
            }
        }
        Ok(KnowledgeBase { entries })
    }

    pub fn entries(&self) -> &[KnowledgeEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, entity_id: &str) -> Option<&KnowledgeEntry> {
        self.entries.iter().find(|e| e.entity_id == entity_id)
    }

    /// Look up a section and package it as a context record (used for
    /// ground-truth injection).
    pub fn context_for(&self, entity_id: &str, section_id: &str) -> Option<RetrievedContext> {
        let entry = self.get(entity_id)?;
        let section = entry.sections.iter().find(|s| s.id == section_id)?;
        Some(RetrievedContext {
            context_id: format!("{entity_id}/{section_id}"),
            entity_id: entity_id.to_string(),
            section_id: section_id.to_string(),
            text: section.text.clone(),
            retrieval_score: 1.0,
        })
    }
}

fn parse_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Load a knowledge base from JSONL, preserving file order.
pub fn load_knowledge_base(path: impl AsRef<Path>) -> Result<KnowledgeBase> {
    let entries: Vec<KnowledgeEntry> = parse_jsonl(path.as_ref())?;
    let kb = KnowledgeBase::new(entries)?;
    log::info!("loaded {} knowledge entries", kb.len());
    Ok(kb)
}

/// Load a query set from JSONL.
pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<Query>> {
    let queries: Vec<Query> = parse_jsonl(path.as_ref())?;
    let mut seen = HashSet::new();
    for q in &queries {
        if q.question.is_empty() {
            return Err(Error::Param(format!("query '{}' has empty question", q.qid)));
        }
        if !seen.insert(q.qid.clone()) {
            return Err(Error::DuplicateEntity(q.qid.clone()));
        }
    }
    Ok(queries)
}

fn entry_embedding(entry: &KnowledgeEntry, embedder: &dyn EmbeddingProvider) -> Result<Vec<f64>> {
    match &entry.image_embedding {
        Some(v) => Ok(v.clone()),
        None => embedder.embed_image(&entry.image),
    }
}

/// Rank entries by cosine similarity between the query image embedding and
/// each entry's image embedding; ties break by ascending entity_id.
pub fn retrieve_top_k<'a>(
    query: &Query,
    kb: &'a KnowledgeBase,
    k: usize,
    embedder: &dyn EmbeddingProvider,
    mode: Parallelism,
) -> Result<Vec<&'a KnowledgeEntry>> {
    if k == 0 {
        return Err(Error::Param("k must be >= 1".into()));
    }
    let query_emb = embedder
        .embed_image(&query.image)
        .map_err(|e| Error::Retrieval(Box::new(e)))?;
    let scored: Vec<Result<(usize, f64)>> =
        map_ordered(mode, &index_vec(kb.len()), |&i| {
            let entry = &kb.entries()[i];
            let emb = entry_embedding(entry, embedder)?;
            Ok((i, cosine(&query_emb, &emb)?))
        });
    let mut scored: Vec<(usize, f64)> = scored
        .into_iter()
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::Retrieval(Box::new(e)))?;
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then_with(|| kb.entries()[a.0].entity_id.cmp(&kb.entries()[b.0].entity_id))
    });
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(i, _)| &kb.entries()[i])
        .collect())
}

fn index_vec(n: usize) -> Vec<usize> {
    (0..n).collect()
}

/// Score every section of the given entries against the question text and
/// return the top `n` in descending order; ties break by ascending
/// (entity_id, section_id).
pub fn select_sections(
    entries: &[&KnowledgeEntry],
    query: &Query,
    n: usize,
    embedder: &dyn EmbeddingProvider,
    mode: Parallelism,
) -> Result<Vec<RetrievedContext>> {
    if entries.is_empty() {
        return Err(Error::EmptyInput("entries"));
    }
    if n == 0 {
        return Err(Error::Param("n must be >= 1".into()));
    }
    let q_emb = embedder.embed_text(&query.question)?;
    let pairs: Vec<(usize, usize)> = entries
        .iter()
        .enumerate()
        .flat_map(|(ei, e)| (0..e.sections.len()).map(move |si| (ei, si)))
        .collect();
    if n > pairs.len() {
        log::warn!(
            "requested top-{n} sections but only {} available; returning all",
            pairs.len()
        );
    }
    let scored: Vec<Result<(usize, usize, f64)>> = map_ordered(mode, &pairs, |&(ei, si)| {
        let s_emb = embedder.embed_text(&entries[ei].sections[si].text)?;
        Ok((ei, si, cosine(&q_emb, &s_emb)?))
    });
    let mut scored: Vec<(usize, usize, f64)> = scored.into_iter().collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .unwrap()
            .then_with(|| {
                let (ea, eb) = (entries[a.0], entries[b.0]);
                ea.entity_id
                    .cmp(&eb.entity_id)
                    .then_with(|| ea.sections[a.1].id.cmp(&eb.sections[b.1].id))
            })
    });
    Ok(scored
        .into_iter()
        .take(n)
        .map(|(ei, si, score)| {
            let e = entries[ei];
            let s = &e.sections[si];
            RetrievedContext {
                context_id: format!("{}/{}", e.entity_id, s.id),
                entity_id: e.entity_id.clone(),
                section_id: s.id.clone(),
                text: s.text.clone(),
                retrieval_score: score,
            }
        })
        .collect())
}

/// Force a ground-truth section into the context list, replacing the context
/// at `slot` (1-based; clamped to the lowest rank). Returns the new list and
/// whether the ground truth was already present (in which case the list is
/// unchanged). Idempotent.
pub fn oracle_insert(
    contexts: &[RetrievedContext],
    gt: &RetrievedContext,
    slot: usize,
) -> Result<(Vec<RetrievedContext>, bool)> {
    if contexts.is_empty() {
        return Err(Error::EmptyInput("contexts"));
    }
    let already = contexts
        .iter()
        .any(|c| c.entity_id == gt.entity_id && c.section_id == gt.section_id);
    if already {
        return Ok((contexts.to_vec(), true));
    }
    let idx = slot.max(1).min(contexts.len()) - 1;
    let mut out = contexts.to_vec();
    out[idx] = gt.clone();
    Ok((out, false))
}

/// Default injection slot: the last of the standard top-3 contexts.
pub const DEFAULT_ORACLE_SLOT: usize = 3;

/// Ground-truth reference for oracle runs, JSONL
/// `{"qid", "entity_id", "section_id"}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GtRef {
    pub qid: String,
    pub entity_id: String,
    pub section_id: String,
}

pub fn load_gt_refs(path: impl AsRef<Path>) -> Result<Vec<GtRef>> {
    parse_jsonl(path.as_ref())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clients::stub::HashEmbedder;
    use std::io::Write;

    fn kb_line(id: &str, image: &str, emb: Option<&[f64]>) -> String {
        let mut v = serde_json::json!({
            "entity_id": id,
            "title": format!("title {id}"),
            "sections": [{"id": "s1", "text": format!("text for {id}")}],
            "image": image,
        });
        if let Some(e) = emb {
            v["image_embedding"] = serde_json::json!(e);
        }
        v.to_string()
    }

    fn write_tmp(lines: &[String]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn load_preserves_order() {
        let f = write_tmp(&[
            kb_line("e1", "img://1", None),
            kb_line("e2", "img://2", None),
            kb_line("e3", "img://3", None),
        ]);
        let kb = load_knowledge_base(f.path()).unwrap();
        assert_eq!(kb.len(), 3);
        let ids: Vec<&str> = kb.entries().iter().map(|e| e.entity_id.as_str()).collect();
        assert_eq!(ids, ["e1", "e2", "e3"]);
    }

    #[test]
    fn load_empty_file_is_empty_kb() {
        let f = write_tmp(&[]);
        let kb = load_knowledge_base(f.path()).unwrap();
        assert!(kb.is_empty());
    }

    #[test]
    fn load_reports_line_number_for_missing_field() {
        let bad = r#"{"entity_id": "e2", "title": "t", "image": "i"}"#.to_string();
        let f = write_tmp(&[kb_line("e1", "img://1", None), bad]);
        match load_knowledge_base(f.path()) {
            Err(Error::Parse { line: 2, message }) => {
                assert!(message.contains("sections"), "{message}");
            }
            other => panic!("expected parse error at line 2, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_duplicate_ids() {
        let f = write_tmp(&[kb_line("e1", "a", None), kb_line("e1", "b", None)]);
        assert!(matches!(
            load_knowledge_base(f.path()),
            Err(Error::DuplicateEntity(id)) if id == "e1"
        ));
    }

    fn query(image: &str) -> Query {
        Query {
            qid: "q1".into(),
            image: image.into(),
            question: "what is pictured?".into(),
            answers: vec!["x".into()],
            split_tag: None,
        }
    }

    #[test]
    fn retrieval_ranks_exact_match_first() {
        // Query image string equals e2's: hash embeddings coincide, cosine 1.
        let kb = KnowledgeBase::new(
            ["e1", "e2", "e3"]
                .iter()
                .map(|id| {
                    serde_json::from_str(&kb_line(id, &format!("img://{id}"), None)).unwrap()
                })
                .collect(),
        )
        .unwrap();
        let embedder = HashEmbedder::new(16);
        let top = retrieve_top_k(
            &query("img://e2"),
            &kb,
            1,
            &embedder,
            Parallelism::Sequential,
        )
        .unwrap();
        assert_eq!(top[0].entity_id, "e2");
    }

    #[test]
    fn retrieval_caps_at_kb_size() {
        let kb = KnowledgeBase::new(
            ["e1", "e2", "e3"]
                .iter()
                .map(|id| serde_json::from_str(&kb_line(id, "img://z", None)).unwrap())
                .collect(),
        )
        .unwrap();
        let embedder = HashEmbedder::new(16);
        let top =
            retrieve_top_k(&query("img://q"), &kb, 10, &embedder, Parallelism::Sequential).unwrap();
        assert_eq!(top.len(), 3);
    }

    #[test]
    fn retrieval_breaks_ties_by_entity_id() {
        // Identical embeddings for e2 and e1: tie resolved by id.
        let emb = vec![1.0, 0.0, 0.0];
        let kb = KnowledgeBase::new(vec![
            serde_json::from_str(&kb_line("e2", "a", Some(&emb))).unwrap(),
            serde_json::from_str(&kb_line("e1", "b", Some(&emb))).unwrap(),
        ])
        .unwrap();
        // Pin the query image to the same direction.
        let embedder = crate::clients::stub::PinnedEmbedder::new(
            3,
            vec![crate::clients::stub::EmbeddingPin {
                text: "img://q".into(),
                vector: emb.clone(),
            }],
        );
        let top =
            retrieve_top_k(&query("img://q"), &kb, 2, &embedder, Parallelism::Sequential).unwrap();
        assert_eq!(top[0].entity_id, "e1");
        assert_eq!(top[1].entity_id, "e2");
    }

    #[test]
    fn retrieval_invariant_under_embedding_rescale() {
        let base = [0.5, 0.25, -0.3];
        let scaled: Vec<f64> = base.iter().map(|x| x * 7.5).collect();
        let other = [0.1, 0.9, 0.2];
        let kb1 = KnowledgeBase::new(vec![
            serde_json::from_str(&kb_line("e1", "a", Some(&base))).unwrap(),
            serde_json::from_str(&kb_line("e2", "b", Some(&other))).unwrap(),
        ])
        .unwrap();
        let kb2 = KnowledgeBase::new(vec![
            serde_json::from_str(&kb_line("e1", "a", Some(&scaled))).unwrap(),
            serde_json::from_str(&kb_line("e2", "b", Some(&other))).unwrap(),
        ])
        .unwrap();
        let embedder = HashEmbedder::new(3);
        let q = query("img://q");
        let order = |kb: &KnowledgeBase| {
            retrieve_top_k(&q, kb, 2, &embedder, Parallelism::Sequential)
                .unwrap()
                .iter()
                .map(|e| e.entity_id.clone())
                .collect::<Vec<_>>()
        };
        assert_eq!(order(&kb1), order(&kb2));
    }

    fn entry_with_sections(id: &str, sections: &[(&str, &str)]) -> KnowledgeEntry {
        KnowledgeEntry {
            entity_id: id.into(),
            title: id.into(),
            sections: sections
                .iter()
                .map(|(sid, text)| Section {
                    id: sid.to_string(),
                    text: text.to_string(),
                })
                .collect(),
            image: format!("img://{id}"),
            image_embedding: None,
        }
    }

    #[test]
    fn select_sections_returns_top_n() {
        let e = entry_with_sections(
            "e1",
            &[
                ("s1", "alpha"),
                ("s2", "beta"),
                ("s3", "gamma"),
                ("s4", "delta"),
                ("s5", "epsilon"),
            ],
        );
        let embedder = HashEmbedder::new(16);
        let q = query("img://q");
        let got = select_sections(&[&e], &q, 3, &embedder, Parallelism::Sequential).unwrap();
        assert_eq!(got.len(), 3);
        assert!(got[0].retrieval_score >= got[1].retrieval_score);
        assert!(got[1].retrieval_score >= got[2].retrieval_score);
    }

    #[test]
    fn select_sections_exact_question_match_ranks_first() {
        let q = query("img://q");
        let e = entry_with_sections(
            "e1",
            &[("s1", "unrelated"), ("s2", "what is pictured?"), ("s3", "noise")],
        );
        let embedder = HashEmbedder::new(16);
        let got = select_sections(&[&e], &q, 1, &embedder, Parallelism::Sequential).unwrap();
        assert_eq!(got[0].section_id, "s2");
        assert!((got[0].retrieval_score - 1.0).abs() < 1e-9);
    }

    #[test]
    fn select_sections_overlong_n_returns_all() {
        let e = entry_with_sections("e1", &[("s1", "a"), ("s2", "b")]);
        let embedder = HashEmbedder::new(16);
        let q = query("img://q");
        let got = select_sections(&[&e], &q, 5, &embedder, Parallelism::Sequential).unwrap();
        assert_eq!(got.len(), 2);
    }

    fn ctx(entity: &str, section: &str, score: f64) -> RetrievedContext {
        RetrievedContext {
            context_id: format!("{entity}/{section}"),
            entity_id: entity.into(),
            section_id: section.into(),
            text: format!("text {entity} {section}"),
            retrieval_score: score,
        }
    }

    struct FailingEmbedder;

    impl crate::clients::EmbeddingProvider for FailingEmbedder {
        fn dimension(&self) -> usize {
            4
        }
        fn embed_text(&self, _: &str) -> crate::error::Result<Vec<f64>> {
            Err(Error::Embedding("service down".into()))
        }
        fn embed_image(&self, _: &str) -> crate::error::Result<Vec<f64>> {
            Err(Error::Embedding("service down".into()))
        }
    }

    #[test]
    fn retrieval_error_carries_embedder_cause() {
        let kb = KnowledgeBase::new(vec![entry_with_sections("e1", &[("s1", "text")])]).unwrap();
        match retrieve_top_k(&query("img://q"), &kb, 1, &FailingEmbedder, Parallelism::Sequential)
        {
            Err(Error::Retrieval(cause)) => {
                assert!(matches!(*cause, Error::Embedding(_)));
            }
            other => panic!("expected retrieval error, got {other:?}"),
        }
    }

    #[test]
    fn oracle_insert_replaces_rank_three() {
        let contexts = vec![ctx("a", "s1", 0.9), ctx("b", "s1", 0.8), ctx("c", "s1", 0.7)];
        let gt = ctx("gold", "s9", 1.0);
        let (out, already) = oracle_insert(&contexts, &gt, DEFAULT_ORACLE_SLOT).unwrap();
        assert!(!already);
        assert_eq!(out.len(), 3);
        assert_eq!(out[2].entity_id, "gold");
        assert_eq!(out[0].entity_id, "a");
        assert_eq!(
            out.iter().filter(|c| c.entity_id == "gold").count(),
            1
        );
    }

    #[test]
    fn oracle_insert_noop_when_present() {
        let contexts = vec![ctx("gold", "s9", 0.9), ctx("b", "s1", 0.8)];
        let gt = ctx("gold", "s9", 1.0);
        let (out, already) = oracle_insert(&contexts, &gt, DEFAULT_ORACLE_SLOT).unwrap();
        assert!(already);
        assert_eq!(out, contexts);
    }

    #[test]
    fn oracle_insert_is_idempotent() {
        let contexts = vec![ctx("a", "s1", 0.9), ctx("b", "s1", 0.8), ctx("c", "s1", 0.7)];
        let gt = ctx("gold", "s9", 1.0);
        let (once, _) = oracle_insert(&contexts, &gt, DEFAULT_ORACLE_SLOT).unwrap();
        let (twice, already) = oracle_insert(&once, &gt, DEFAULT_ORACLE_SLOT).unwrap();
        assert!(already);
        assert_eq!(once, twice);
    }
}
