//! Metrics and experiment runners: answer scoring, helpful/harmful ratios,
//! sentence-similarity statistics, single-mode runs, and ablation sweeps.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::config::{Mode, RunConfig, ScoringRule};
use crate::corpus::{KnowledgeBase, Query, RetrievedContext};
use crate::correlation::CorrelationProfile;
use crate::decoding::TraceStep;
use crate::error::{Error, Result};
use crate::exec::map_ordered;
use crate::pipeline::{answer_query, PipelineClients, QueryOutcome};

/// Note embedded in every report header: the desk-scale scorer substitutes a
/// normalized exact match for the learned answer-equivalence metric.
pub const SCORING_NOTE: &str = "exact_relaxed substituted for learned answer-equivalence scoring";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub qid: String,
    pub prediction: String,
    pub gold: Vec<String>,
    pub score: f64,
    /// Full credit under the scoring rule.
    pub correct: bool,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Lowercase, strip articles, collapse whitespace, strip terminal
/// punctuation.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let words: Vec<&str> = lowered
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect();
    let joined = words.join(" ");
    joined
        .trim_end_matches(['.', ',', '!', '?', ';', ':'])
        .trim()
        .to_string()
}

fn numeric_match(prediction: &str, gold: &str) -> bool {
    match (prediction.parse::<f64>(), gold.parse::<f64>()) {
        (Ok(p), Ok(g)) => (p - g).abs() <= 0.1 * g.abs(),
        _ => false,
    }
}

/// Score a prediction against the gold answers, returning a value in [0, 1].
/// `exact_relaxed` yields 0 or 1; `vqa_soft` yields min(matches/3, 1) over
/// the annotator answers.
pub fn score_answer(
    prediction: &str,
    gold: &[String],
    rule: ScoringRule,
    numeric_tolerance: bool,
) -> Result<f64> {
    if gold.is_empty() {
        return Err(Error::EmptyInput("gold answers"));
    }
    let pred = normalize_answer(prediction);
    let matches = |g: &String| {
        let g = normalize_answer(g);
        pred == g || (numeric_tolerance && numeric_match(&pred, &g))
    };
    Ok(match rule {
        ScoringRule::ExactRelaxed => {
            if gold.iter().any(matches) {
                1.0
            } else {
                0.0
            }
        }
        ScoringRule::VqaSoft => {
            let m = gold.iter().filter(|g| matches(g)).count();
            (m as f64 / 3.0).min(1.0)
        }
    })
}

/// Paired comparison against a base run: the fraction of queries flipped
/// wrong-to-right (helpful) and right-to-wrong (harmful).
pub fn helpful_harmful(base: &[EvalRecord], other: &[EvalRecord]) -> Result<(f64, f64)> {
    let (h, m, n) = helpful_harmful_counts(base, other)?;
    Ok((h as f64 / n as f64, m as f64 / n as f64))
}

/// Integer-count version (exact identities hold on counts).
pub fn helpful_harmful_counts(
    base: &[EvalRecord],
    other: &[EvalRecord],
) -> Result<(usize, usize, usize)> {
    if base.len() != other.len() {
        return Err(Error::Unpaired(format!(
            "{} base vs {} paired records",
            base.len(),
            other.len()
        )));
    }
    let base_by_qid: HashMap<&str, &EvalRecord> =
        base.iter().map(|r| (r.qid.as_str(), r)).collect();
    let mut helpful = 0;
    let mut harmful = 0;
    for r in other {
        let b = base_by_qid
            .get(r.qid.as_str())
            .ok_or_else(|| Error::Unpaired(r.qid.clone()))?;
        if !b.correct && r.correct {
            helpful += 1;
        }
        if b.correct && !r.correct {
            harmful += 1;
        }
    }
    Ok((helpful, harmful, other.len()))
}

// ---- similarity statistics ---------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
}

/// Published reference distribution, reported alongside measured statistics
/// for comparison (never asserted).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceStats {
    pub mean: f64,
    pub stddev: f64,
    pub gold_in_top_band: f64,
}

pub const REFERENCE_STATS: ReferenceStats = ReferenceStats {
    mean: 0.4,
    stddev: 0.15,
    gold_in_top_band: 0.9,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityStats {
    pub n_profiles: usize,
    pub n_sentences: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub stddev: f64,
    pub sentences_per_context: f64,
    pub histogram: Vec<HistogramBin>,
    /// Fraction of queries (among those whose gold answer appears in some
    /// sentence) where a gold-bearing sentence lands in the top-25% score
    /// band.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gold_in_top_band: Option<f64>,
    pub reference: ReferenceStats,
}

impl SimilarityStats {
    /// `bin_left,bin_right,count` per line.
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("bin_left,bin_right,count\n");
        for b in &self.histogram {
            out.push_str(&format!("{},{},{}\n", b.left, b.right, b.count));
        }
        out
    }
}

/// Aggregate raw sentence scores across profiles. `golds[i]` (when given)
/// holds the gold answers for profile `i`.
pub fn similarity_stats(
    profiles: &[CorrelationProfile],
    golds: Option<&[Vec<String>]>,
    bins: usize,
) -> Result<SimilarityStats> {
    if profiles.is_empty() {
        return Err(Error::EmptyInput("profiles"));
    }
    if bins == 0 {
        return Err(Error::Param("bins must be >= 1".into()));
    }
    let scores: Vec<f64> = profiles
        .iter()
        .flat_map(|p| p.sentences.iter().map(|s| s.score))
        .collect();
    let n = scores.len();
    let mean = if n == 0 {
        0.0
    } else {
        scores.iter().sum::<f64>() / n as f64
    };
    let stddev = if n == 0 {
        0.0
    } else {
        (scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n as f64).sqrt()
    };
    let n_contexts: usize = profiles
        .iter()
        .map(|p| {
            p.sentences
                .iter()
                .map(|s| s.context_id.as_str())
                .collect::<std::collections::HashSet<_>>()
                .len()
        })
        .sum();
    let sentences_per_context = if n_contexts == 0 {
        0.0
    } else {
        n as f64 / n_contexts as f64
    };

    let width = 2.0 / bins as f64;
    let mut histogram: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin {
            left: -1.0 + i as f64 * width,
            right: -1.0 + (i + 1) as f64 * width,
            count: 0,
        })
        .collect();
    for &s in &scores {
        let idx = (((s + 1.0) / width) as usize).min(bins - 1);
        histogram[idx].count += 1;
    }

    let gold_in_top_band = golds.and_then(|golds| {
        let mut with_gold = 0usize;
        let mut hits = 0usize;
        for (p, gs) in profiles.iter().zip(golds) {
            let bearing: Vec<usize> = p
                .sentences
                .iter()
                .filter(|s| {
                    let norm = normalize_answer(&s.text);
                    gs.iter().any(|g| norm.contains(&normalize_answer(g)))
                })
                .map(|s| s.global_index)
                .collect();
            if bearing.is_empty() {
                continue;
            }
            with_gold += 1;
            let band = top_band(p, 0.25);
            if bearing.iter().any(|i| band.contains(i)) {
                hits += 1;
            }
        }
        (with_gold > 0).then(|| hits as f64 / with_gold as f64)
    });

    Ok(SimilarityStats {
        n_profiles: profiles.len(),
        n_sentences: n,
        mean,
        stddev,
        sentences_per_context,
        histogram,
        gold_in_top_band,
        reference: REFERENCE_STATS,
    })
}

/// Global indices of the top `frac` sentences by clamped score (at least
/// one).
fn top_band(profile: &CorrelationProfile, frac: f64) -> std::collections::HashSet<usize> {
    let n = profile.sentences.len();
    if n == 0 {
        return Default::default();
    }
    let take = ((n as f64 * frac).ceil() as usize).max(1);
    let mut ranked: Vec<&crate::correlation::ScoredSentence> = profile.sentences.iter().collect();
    ranked.sort_by(|a, b| {
        b.clamped_score
            .partial_cmp(&a.clamped_score)
            .unwrap()
            .then_with(|| a.global_index.cmp(&b.global_index))
    });
    ranked[..take].iter().map(|s| s.global_index).collect()
}

// ---- experiment runner ---------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: Mode,
    pub n: usize,
    pub n_correct: usize,
    pub accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub helpful_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub harmful_ratio: Option<f64>,
    pub failures: usize,
    pub scoring: String,
    pub config: RunConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryTrace {
    pub qid: String,
    pub steps: Vec<TraceStep>,
}

/// A completed run: aggregate report plus per-query records and traces.
#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub report: EvalReport,
    pub records: Vec<EvalRecord>,
    pub traces: Vec<QueryTrace>,
    pub outcomes: Vec<QueryOutcome>,
}

fn run_mode(
    queries: &[Query],
    kb: &KnowledgeBase,
    clients: &PipelineClients<'_>,
    cfg: &RunConfig,
    gt: Option<&HashMap<String, RetrievedContext>>,
) -> (Vec<EvalRecord>, Vec<QueryTrace>, Vec<QueryOutcome>, usize) {
    let results: Vec<(EvalRecord, QueryTrace, Option<QueryOutcome>)> =
        map_ordered(cfg.parallelism(), queries, |q| {
            let gt_ctx = gt.and_then(|m| m.get(&q.qid));
            match answer_query(q, kb, clients, cfg, gt_ctx) {
                Ok(outcome) => {
                    let score =
                        score_answer(&outcome.answer, &q.answers, cfg.scoring_rule, cfg.numeric_tolerance)
                            .unwrap_or(0.0);
                    let record = EvalRecord {
                        qid: q.qid.clone(),
                        prediction: outcome.answer.clone(),
                        gold: q.answers.clone(),
                        score,
                        correct: score >= 1.0,
                        mode: cfg.mode,
                        error: None,
                    };
                    let trace = QueryTrace {
                        qid: q.qid.clone(),
                        steps: outcome.trace.clone(),
                    };
                    (record, trace, Some(outcome))
                }
                Err(e) => {
                    // per-query failures degrade to incorrect; the run goes on
                    log::warn!("query {} failed: {e}", q.qid);
                    (
                        EvalRecord {
                            qid: q.qid.clone(),
                            prediction: String::new(),
                            gold: q.answers.clone(),
                            score: 0.0,
                            correct: false,
                            mode: cfg.mode,
                            error: Some(e.to_string()),
                        },
                        QueryTrace {
                            qid: q.qid.clone(),
                            steps: Vec::new(),
                        },
                        None,
                    )
                }
            }
        });
    let mut records = Vec::with_capacity(results.len());
    let mut traces = Vec::with_capacity(results.len());
    let mut outcomes = Vec::new();
    let mut failures = 0;
    for (r, t, o) in results {
        if r.error.is_some() {
            failures += 1;
        }
        records.push(r);
        traces.push(t);
        if let Some(o) = o {
            outcomes.push(o);
        }
    }
    (records, traces, outcomes, failures)
}

/// Run one mode over the query set. Modes other than `base` also run the
/// base pass to report helpful/harmful ratios. `gt` supplies the
/// ground-truth contexts for oracle mode, keyed by qid.
pub fn run_experiment(
    queries: &[Query],
    kb: &KnowledgeBase,
    clients: &PipelineClients<'_>,
    cfg: &RunConfig,
    gt: Option<&HashMap<String, RetrievedContext>>,
) -> Result<ExperimentRun> {
    cfg.validate()?;
    let (records, traces, outcomes, failures) = run_mode(queries, kb, clients, cfg, gt);
    let n = records.len();
    let n_correct = records.iter().filter(|r| r.correct).count();
    let accuracy = if n == 0 {
        0.0
    } else {
        records.iter().map(|r| r.score).sum::<f64>() / n as f64
    };
    let (helpful_ratio, harmful_ratio) = if cfg.mode != Mode::Base && n > 0 {
        let base_cfg = RunConfig {
            mode: Mode::Base,
            ..cfg.clone()
        };
        let (base_records, _, _, _) = run_mode(queries, kb, clients, &base_cfg, None);
        let (h, m) = helpful_harmful(&base_records, &records)?;
        (Some(h), Some(m))
    } else {
        (None, None)
    };
    Ok(ExperimentRun {
        report: EvalReport {
            mode: cfg.mode,
            n,
            n_correct,
            accuracy,
            helpful_ratio,
            harmful_ratio,
            failures,
            scoring: SCORING_NOTE.to_string(),
            config: cfg.clone(),
        },
        records,
        traces,
        outcomes,
    })
}

// ---- ablation sweeps ------------------------------------------------------

/// Compression-strength grid.
pub const ALPHA_GRID: [f64; 6] = [0.1, 0.3, 0.5, 0.7, 0.9, 1.0];
/// Compression-fraction grid.
pub const TAU_GRID: [f64; 3] = [0.25, 0.5, 0.75];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationCell {
    pub label: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationTable {
    pub alpha: Vec<AblationCell>,
    pub tau: Vec<AblationCell>,
    pub components: Vec<AblationCell>,
}

impl AblationTable {
    pub fn text_table(&self) -> String {
        let mut out = String::new();
        for (name, cells) in [
            ("alpha", &self.alpha),
            ("tau", &self.tau),
            ("components", &self.components),
        ] {
            out.push_str(&format!("== {name} ==\n"));
            for c in cells {
                out.push_str(&format!(
                    "{:<24} accuracy {:.4}  helpful {}  harmful {}\n",
                    c.label,
                    c.report.accuracy,
                    c.report
                        .helpful_ratio
                        .map_or("-".to_string(), |v| format!("{v:.4}")),
                    c.report
                        .harmful_ratio
                        .map_or("-".to_string(), |v| format!("{v:.4}")),
                ));
            }
        }
        out
    }
}

/// Sweep the compression strength, the compression fraction, and the
/// cumulative component grid (vanilla, +reasoning, +decoding, +compression),
/// producing one report per grid point.
pub fn ablate(
    queries: &[Query],
    kb: &KnowledgeBase,
    clients: &PipelineClients<'_>,
    cfg: &RunConfig,
) -> Result<AblationTable> {
    let mut alpha = Vec::new();
    for &a in &ALPHA_GRID {
        let point = RunConfig {
            cpe_alpha: a,
            mode: Mode::Ccvqa,
            ..cfg.clone()
        };
        let run = run_experiment(queries, kb, clients, &point, None)?;
        alpha.push(AblationCell {
            label: format!("alpha={a}"),
            report: run.report,
        });
    }
    let mut tau = Vec::new();
    for &t in &TAU_GRID {
        let point = RunConfig {
            tau: t,
            mode: Mode::Ccvqa,
            ..cfg.clone()
        };
        let run = run_experiment(queries, kb, clients, &point, None)?;
        tau.push(AblationCell {
            label: format!("tau={t}"),
            report: run.report,
        });
    }
    let mut components = Vec::new();
    let grid: [(&str, Mode, bool, bool, bool); 4] = [
        ("vanilla", Mode::Rag, false, false, false),
        ("+reasoning", Mode::Ccvqa, true, false, false),
        ("+decoding", Mode::Ccvqa, true, true, false),
        ("+compression", Mode::Ccvqa, true, true, true),
    ];
    for (label, mode, vccr, cad, cpe) in grid {
        let point = RunConfig {
            mode,
            vccr,
            cad,
            cpe,
            ..cfg.clone()
        };
        let run = run_experiment(queries, kb, clients, &point, None)?;
        components.push(AblationCell {
            label: label.to_string(),
            report: run.report,
        });
    }
    Ok(AblationTable {
        alpha,
        tau,
        components,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(qid: &str, correct: bool, mode: Mode) -> EvalRecord {
        EvalRecord {
            qid: qid.into(),
            prediction: String::new(),
            gold: vec!["x".into()],
            score: if correct { 1.0 } else { 0.0 },
            correct,
            mode,
            error: None,
        }
    }

    #[test]
    fn normalization_rules() {
        assert_eq!(normalize_answer("The Amanita"), "amanita");
        assert_eq!(normalize_answer("  An   Answer.  "), "answer");
        assert_eq!(normalize_answer("Golden Gate Bridge!"), "golden gate bridge");
    }

    #[test]
    fn exact_relaxed_matches_with_articles() {
        let gold = vec!["amanita".to_string()];
        assert_eq!(
            score_answer("The Amanita", &gold, ScoringRule::ExactRelaxed, false).unwrap(),
            1.0
        );
        assert_eq!(
            score_answer("russula", &gold, ScoringRule::ExactRelaxed, false).unwrap(),
            0.0
        );
    }

    #[test]
    fn vqa_soft_counts_annotators() {
        let gold: Vec<String> = ["red", "red", "red", "crimson", "red", "red", "red", "red", "red", "red"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        // 9 of 10 annotators said red
        assert_eq!(
            score_answer("red", &gold, ScoringRule::VqaSoft, false).unwrap(),
            1.0
        );
        assert!(
            (score_answer("crimson", &gold, ScoringRule::VqaSoft, false).unwrap() - 1.0 / 3.0)
                .abs()
                < 1e-12
        );
    }

    #[test]
    fn numeric_tolerance_flag() {
        let gold = vec!["100".to_string()];
        assert_eq!(
            score_answer("109", &gold, ScoringRule::ExactRelaxed, true).unwrap(),
            1.0
        );
        assert_eq!(
            score_answer("109", &gold, ScoringRule::ExactRelaxed, false).unwrap(),
            0.0
        );
        assert_eq!(
            score_answer("112", &gold, ScoringRule::ExactRelaxed, true).unwrap(),
            0.0
        );
    }

    #[test]
    fn empty_gold_is_an_error() {
        assert!(score_answer("x", &[], ScoringRule::ExactRelaxed, false).is_err());
    }

    #[test]
    fn helpful_harmful_set_counting() {
        // n=4, base-correct {1,2}, rag-correct {2,3}
        let base = vec![
            rec("1", true, Mode::Base),
            rec("2", true, Mode::Base),
            rec("3", false, Mode::Base),
            rec("4", false, Mode::Base),
        ];
        let rag = vec![
            rec("1", false, Mode::Rag),
            rec("2", true, Mode::Rag),
            rec("3", true, Mode::Rag),
            rec("4", false, Mode::Rag),
        ];
        let (h, m) = helpful_harmful(&base, &rag).unwrap();
        assert_eq!(h, 0.25);
        assert_eq!(m, 0.25);
    }

    #[test]
    fn helpful_harmful_identical_runs() {
        let base = vec![rec("1", true, Mode::Base), rec("2", false, Mode::Base)];
        let (h, m) = helpful_harmful(&base, &base).unwrap();
        assert_eq!((h, m), (0.0, 0.0));
    }

    #[test]
    fn helpful_harmful_rejects_unpaired() {
        let base = vec![rec("1", true, Mode::Base)];
        let rag = vec![rec("2", true, Mode::Rag)];
        assert!(matches!(
            helpful_harmful(&base, &rag),
            Err(Error::Unpaired(_))
        ));
    }

    fn profile_with_scores(scores: &[f64]) -> CorrelationProfile {
        let sentences = scores
            .iter()
            .enumerate()
            .map(|(i, &score)| crate::correlation::ScoredSentence {
                global_index: i,
                context_id: "c".into(),
                text: format!("sentence {i}."),
                score,
                clamped_score: score.max(0.0),
            })
            .collect();
        CorrelationProfile {
            sentences,
            low_set: Default::default(),
            tau: 0.0,
            k_aggregate: 1.0,
        }
    }

    #[test]
    fn stats_constant_scores() {
        let p = profile_with_scores(&[0.5, 0.5, 0.5]);
        let s = similarity_stats(&[p], None, 10).unwrap();
        assert_eq!(s.mean, 0.5);
        assert_eq!(s.stddev, 0.0);
        assert_eq!(s.n_sentences, 3);
        assert_eq!(s.sentences_per_context, 3.0);
    }

    #[test]
    fn stats_two_point_distribution() {
        let p = profile_with_scores(&[0.0, 1.0]);
        let s = similarity_stats(&[p], None, 4).unwrap();
        assert_eq!(s.mean, 0.5);
        assert_eq!(s.stddev, 0.5);
        let total: usize = s.histogram.iter().map(|b| b.count).sum();
        assert_eq!(total, 2);
        assert_eq!(s.reference.mean, 0.4);
    }

    #[test]
    fn stats_gold_band_detection() {
        // gold answer sits in the highest-scored sentence
        let mut p = profile_with_scores(&[0.9, 0.2, 0.1, 0.05]);
        p.sentences[0].text = "This is the Amanita muscaria mushroom.".into();
        let golds = vec![vec!["Amanita muscaria".to_string()]];
        let s = similarity_stats(&[p], Some(&golds), 10).unwrap();
        assert_eq!(s.gold_in_top_band, Some(1.0));
    }

    #[test]
    fn histogram_csv_shape() {
        let p = profile_with_scores(&[0.5]);
        let s = similarity_stats(&[p], None, 2).unwrap();
        let csv = s.histogram_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "bin_left,bin_right,count");
        assert_eq!(lines.len(), 3);
    }
}
