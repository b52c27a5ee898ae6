//! Sentence-level correlation: segmentation, relevance scoring against the
//! rewritten question and query image, the low-correlation set, and the
//! scalar aggregate `K`.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::clients::{cosine, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::exec::{map_ordered, Parallelism};
use crate::vccr::ContextUnit;

/// One scored sentence. `score` is the raw mean of the two cosines (in
/// [-1, 1]); `clamped_score` is `max(score, 0)` and is what ranking and the
/// `K` aggregate consume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSentence {
    pub global_index: usize,
    pub context_id: String,
    pub text: String,
    pub score: f64,
    pub clamped_score: f64,
}

/// Correlation profile over all sentences of all contexts, in original order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationProfile {
    pub sentences: Vec<ScoredSentence>,
    pub low_set: BTreeSet<usize>,
    pub tau: f64,
    pub k_aggregate: f64,
}

/// Split text into sentences on `.` `!` `?` followed by whitespace or end of
/// input, keeping the terminator. Abbreviations get no special handling.
/// Joining the segments with single spaces preserves every non-whitespace
/// character of the input.
pub fn segment_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0usize;
    let mut iter = text.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        if matches!(c, '.' | '!' | '?') {
            let boundary = match iter.peek() {
                None => true,
                Some((_, next)) => next.is_whitespace(),
            };
            if boundary {
                let end = i + c.len_utf8();
                let seg = text[start..end].trim();
                if !seg.is_empty() {
                    out.push(seg.to_string());
                }
                start = end;
            }
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail.to_string());
    }
    out
}

/// Mean of the sentence's cosine to the rewritten question and to the query
/// image.
pub fn score_sentence(
    sentence: &str,
    q_star: &str,
    image_ref: &str,
    embedder: &dyn EmbeddingProvider,
) -> Result<f64> {
    if sentence.is_empty() {
        return Err(Error::EmptyInput("sentence"));
    }
    let s_emb = embedder
        .embed_text(sentence)
        .map_err(|e| Error::Embedding(e.to_string()))?;
    let q_emb = embedder.embed_text(q_star)?;
    let i_emb = embedder.embed_image(image_ref)?;
    Ok(0.5 * (cosine(&q_emb, &s_emb)? + cosine(&i_emb, &s_emb)?))
}

/// The bottom `floor(tau * N)` sentences by clamped score; ties break by
/// ascending global index (so the later-indexed of two tied sentences is
/// compressed first).
pub fn low_correlation_set(sentences: &[ScoredSentence], tau: f64) -> Result<BTreeSet<usize>> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Param(format!("tau must be in [0, 1], got {tau}")));
    }
    let n = sentences.len();
    let b = (tau * n as f64).floor() as usize;
    let mut ranked: Vec<&ScoredSentence> = sentences.iter().collect();
    ranked.sort_by(|a, b| {
        b.clamped_score
            .partial_cmp(&a.clamped_score)
            .unwrap()
            .then_with(|| a.global_index.cmp(&b.global_index))
    });
    Ok(ranked[n - b..].iter().map(|s| s.global_index).collect())
}

/// Aggregate a clamped-score vector into `K = 1 - mean(r) * C`, where the
/// concentration `C = 1 - H(p)/ln(M)` is computed on the sum-normalized
/// scores (`C = 1` for a single sentence, `C = 0` when the scores sum to
/// zero). Result clamped to [0, 1].
pub fn aggregate_k(scores: &[f64]) -> Result<f64> {
    let m = scores.len();
    if m == 0 {
        return Err(Error::EmptyInput("scores"));
    }
    if scores.iter().any(|s| *s < 0.0 || !s.is_finite()) {
        return Err(Error::Param("scores must be clamped to [0, 1]".into()));
    }
    let sum: f64 = scores.iter().sum();
    let mean = sum / m as f64;
    let concentration = if m == 1 {
        1.0
    } else if sum == 0.0 || scores.iter().all(|s| *s == scores[0]) {
        // Equal scores are exactly uniform after normalization, so the
        // entropy equals ln(M) and the concentration vanishes; computing it
        // through logs would leave rounding residue.
        0.0
    } else {
        let entropy: f64 = scores
            .iter()
            .map(|&s| {
                let p = s / sum;
                if p > 0.0 {
                    -p * p.ln()
                } else {
                    0.0
                }
            })
            .sum();
        1.0 - entropy / (m as f64).ln()
    };
    Ok((1.0 - mean * concentration).clamp(0.0, 1.0))
}

/// Segment every context, score every sentence, and assemble the profile.
/// Sentence order follows context order; global indices are contiguous.
pub fn build_profile(
    contexts: &[ContextUnit],
    q_star: &str,
    image_ref: &str,
    tau: f64,
    embedder: &dyn EmbeddingProvider,
    mode: Parallelism,
) -> Result<CorrelationProfile> {
    let mut flat: Vec<(String, String)> = Vec::new();
    for c in contexts {
        for s in segment_sentences(&c.text) {
            flat.push((c.context_id.clone(), s));
        }
    }
    let scored: Vec<Result<f64>> = map_ordered(mode, &flat, |(_, text)| {
        score_sentence(text, q_star, image_ref, embedder)
    });
    let mut sentences = Vec::with_capacity(flat.len());
    for (i, ((context_id, text), score)) in flat.into_iter().zip(scored).enumerate() {
        let score = score?;
        sentences.push(ScoredSentence {
            global_index: i,
            context_id,
            text,
            score,
            clamped_score: score.max(0.0),
        });
    }
    let low_set = low_correlation_set(&sentences, tau)?;
    let k_aggregate = if sentences.is_empty() {
        // No scored sentences: zero mean correlation, so K takes its maximum.
        1.0
    } else {
        let clamped: Vec<f64> = sentences.iter().map(|s| s.clamped_score).collect();
        aggregate_k(&clamped)?
    };
    Ok(CorrelationProfile {
        sentences,
        low_set,
        tau,
        k_aggregate,
    })
}

impl CorrelationProfile {
    /// Diagnostic dump, one row per sentence:
    /// `global_index,context_id,score,clamped_score,in_low_set`.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "global_index,context_id,score,clamped_score,in_low_set")?;
        for s in &self.sentences {
            writeln!(
                w,
                "{},{},{},{},{}",
                s.global_index,
                s.context_id,
                s.score,
                s.clamped_score,
                self.low_set.contains(&s.global_index)
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clients::stub::{EmbeddingPin, PinnedEmbedder};

    #[test]
    fn segments_basic_terminators() {
        assert_eq!(segment_sentences("A. B! C?"), vec!["A.", "B!", "C?"]);
    }

    #[test]
    fn segments_empty_and_unterminated() {
        assert_eq!(segment_sentences(""), Vec::<String>::new());
        assert_eq!(segment_sentences("One sentence"), vec!["One sentence"]);
    }

    #[test]
    fn segments_keep_mid_token_punctuation() {
        // No whitespace after the first '.', so "3.5" stays together.
        assert_eq!(
            segment_sentences("It weighs 3.5 kg. Heavy!"),
            vec!["It weighs 3.5 kg.", "Heavy!"]
        );
    }

    #[test]
    fn segment_join_preserves_non_whitespace() {
        let text = "First point.  Second!\nThird one? trailing words";
        let joined = segment_sentences(text).join(" ");
        let strip = |s: &str| s.chars().filter(|c| !c.is_whitespace()).collect::<String>();
        assert_eq!(strip(text), strip(&joined));
    }

    fn unit(dim: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        v
    }

    fn pinned_for_scores(cq: f64, ci: f64) -> PinnedEmbedder {
        // sentence vector with cosine cq to the question direction and ci to
        // the image direction.
        let rem = (1.0 - cq * cq - ci * ci).max(0.0).sqrt();
        let mut s = vec![0.0; 4];
        s[0] = cq;
        s[1] = ci;
        s[2] = rem;
        PinnedEmbedder::new(
            4,
            vec![
                EmbeddingPin {
                    text: "q*".into(),
                    vector: unit(4, 0),
                },
                EmbeddingPin {
                    text: "img://x".into(),
                    vector: unit(4, 1),
                },
                EmbeddingPin {
                    text: "the sentence.".into(),
                    vector: s,
                },
            ],
        )
    }

    #[test]
    fn score_is_mean_of_two_cosines() {
        let e = pinned_for_scores(0.6, 0.2);
        let got = score_sentence("the sentence.", "q*", "img://x", &e).unwrap();
        assert!((got - 0.4).abs() < 1e-12);
    }

    #[test]
    fn score_one_when_both_cosines_one() {
        let e = PinnedEmbedder::new(
            4,
            vec![
                EmbeddingPin {
                    text: "q*".into(),
                    vector: unit(4, 0),
                },
                EmbeddingPin {
                    text: "img://x".into(),
                    vector: unit(4, 0),
                },
                EmbeddingPin {
                    text: "the sentence.".into(),
                    vector: unit(4, 0),
                },
            ],
        );
        let got = score_sentence("the sentence.", "q*", "img://x", &e).unwrap();
        assert!((got - 1.0).abs() < 1e-12);
    }

    #[test]
    fn score_zero_when_both_cosines_zero() {
        let e = pinned_for_scores(0.0, 0.0);
        let got = score_sentence("the sentence.", "q*", "img://x", &e).unwrap();
        assert_eq!(got, 0.0);
    }

    fn sentences_from(scores: &[f64]) -> Vec<ScoredSentence> {
        scores
            .iter()
            .enumerate()
            .map(|(i, &score)| ScoredSentence {
                global_index: i,
                context_id: "c".into(),
                text: format!("s{i}"),
                score,
                clamped_score: score.max(0.0),
            })
            .collect()
    }

    #[test]
    fn low_set_takes_floor_tau_n_lowest() {
        let s = sentences_from(&[0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2]);
        let low = low_correlation_set(&s, 0.75).unwrap();
        assert_eq!(low.len(), 6); // floor(0.75 * 8)
        assert_eq!(low, (2..8).collect());
    }

    #[test]
    fn low_set_empty_at_tau_zero_full_at_one() {
        let s = sentences_from(&[0.9, 0.1, 0.5]);
        assert!(low_correlation_set(&s, 0.0).unwrap().is_empty());
        assert_eq!(low_correlation_set(&s, 1.0).unwrap().len(), 3);
    }

    #[test]
    fn low_set_ties_resolved_by_global_index() {
        // Two tied at 0.5: the later-indexed one is ranked lower.
        let s = sentences_from(&[0.5, 0.5, 0.9, 0.1]);
        let low = low_correlation_set(&s, 0.5).unwrap(); // b = 2
        assert_eq!(low, [1, 3].into_iter().collect());
    }

    #[test]
    fn low_set_rejects_bad_tau() {
        let s = sentences_from(&[0.5]);
        assert!(low_correlation_set(&s, 1.5).is_err());
        assert!(low_correlation_set(&s, -0.1).is_err());
    }

    #[test]
    fn k_uniform_scores_is_one() {
        assert_eq!(aggregate_k(&[0.3, 0.3, 0.3, 0.3]).unwrap(), 1.0);
        assert_eq!(aggregate_k(&[0.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn k_point_mass_two_sentences() {
        assert_eq!(aggregate_k(&[1.0, 0.0]).unwrap(), 0.5);
    }

    #[test]
    fn k_single_sentence_rule() {
        let r = 0.8;
        assert_eq!(aggregate_k(&[r]).unwrap(), 1.0 - r);
    }

    #[test]
    fn k_empty_is_error() {
        assert!(matches!(aggregate_k(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn k_in_unit_interval_and_monotone_in_mean() {
        // At fixed concentration (same normalized shape), larger mean gives
        // smaller or equal K.
        let lo = [0.2, 0.1, 0.3];
        let hi: Vec<f64> = lo.iter().map(|x| x * 2.0).collect(); // same p, bigger mean
        let k_lo = aggregate_k(&lo).unwrap();
        let k_hi = aggregate_k(&hi).unwrap();
        assert!(k_hi <= k_lo);
        for k in [k_lo, k_hi] {
            assert!((0.0..=1.0).contains(&k));
        }
    }

    #[test]
    fn csv_dump_shape() {
        let s = sentences_from(&[0.9, 0.1]);
        let low = low_correlation_set(&s, 0.5).unwrap();
        let profile = CorrelationProfile {
            sentences: s,
            low_set: low,
            tau: 0.5,
            k_aggregate: 0.5,
        };
        let mut buf = Vec::new();
        profile.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "global_index,context_id,score,clamped_score,in_low_set");
        assert_eq!(lines[1], "0,c,0.9,0.9,false");
        assert_eq!(lines[2], "1,c,0.1,0.1,true");
    }
}
