//! Correlation-aware position assignment.
//!
//! Tokens belonging to low-correlation sentences advance the position counter
//! by `alpha` instead of `1`, compressing their share of the positional
//! space. Focus-hint, query, and generated tokens always advance by `1`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Context,
    Rvis,
    Query,
    Generated,
}

/// What a token belongs to: a context sentence (by global index) or one of
/// the uncompressed regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenTag {
    Sentence(usize),
    Rvis,
    Query,
    Generated,
}

impl TokenTag {
    pub fn region(&self) -> Region {
        match self {
            TokenTag::Sentence(_) => Region::Context,
            TokenTag::Rvis => Region::Rvis,
            TokenTag::Query => Region::Query,
            TokenTag::Generated => Region::Generated,
        }
    }
}

/// Per-token real-valued positions with their region tags. Positions are
/// strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionMap {
    pub positions: Vec<f64>,
    pub regions: Vec<Region>,
}

impl PositionMap {
    /// Standard consecutive integer positions 0..n-1.
    pub fn consecutive(n: usize, region: Region) -> Self {
        PositionMap {
            positions: (0..n).map(|i| i as f64).collect(),
            regions: vec![region; n],
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Append one generated-token position, continuing with a +1 increment.
    pub fn push_generated(&mut self) {
        let next = self.positions.last().map_or(0.0, |p| p + 1.0);
        self.positions.push(next);
        self.regions.push(Region::Generated);
    }

    /// Total positional span consumed (sum of increments from `start`).
    pub fn span_from(&self, start: f64) -> f64 {
        self.positions.last().map_or(0.0, |p| p - start)
    }
}

/// Assign positions over a tagged token stream. Each token adds `alpha` when
/// its sentence is in `low_set`, else `1`; the first token's position is
/// `start` plus its own increment (`start = -1` makes an uncompressed stream
/// begin at position 0).
pub fn assign_positions(
    tags: &[TokenTag],
    sentence_count: usize,
    low_set: &BTreeSet<usize>,
    alpha: f64,
    start: f64,
) -> Result<PositionMap> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Param(format!("alpha must be in (0, 1], got {alpha}")));
    }
    if !start.is_finite() || start < -1.0 {
        return Err(Error::Param(format!("start must be >= -1, got {start}")));
    }
    let mut positions = Vec::with_capacity(tags.len());
    let mut regions = Vec::with_capacity(tags.len());
    let mut pos = start;
    for tag in tags {
        let inc = match tag {
            TokenTag::Sentence(i) => {
                if *i >= sentence_count {
                    return Err(Error::UnknownSentence(*i));
                }
                if low_set.contains(i) {
                    alpha
                } else {
                    1.0
                }
            }
            _ => 1.0,
        };
        pos += inc;
        positions.push(pos);
        regions.push(tag.region());
    }
    Ok(PositionMap { positions, regions })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tags(sentence_lens: &[(usize, usize)]) -> Vec<TokenTag> {
        // (sentence_index, token_count) pairs
        sentence_lens
            .iter()
            .flat_map(|&(s, n)| std::iter::repeat_n(TokenTag::Sentence(s), n))
            .collect()
    }

    #[test]
    fn compresses_low_sentences() {
        // 3 tokens in a high sentence then 2 in a low one, alpha = 0.5.
        let t = tags(&[(0, 3), (1, 2)]);
        let low: BTreeSet<usize> = [1].into();
        let pm = assign_positions(&t, 2, &low, 0.5, -1.0).unwrap();
        assert_eq!(pm.positions, vec![0.0, 1.0, 2.0, 2.5, 3.0]);
        assert_eq!(pm.regions, vec![Region::Context; 5]);
    }

    #[test]
    fn alpha_one_matches_consecutive_bitwise() {
        let t = tags(&[(0, 2), (1, 3)]);
        let low: BTreeSet<usize> = [0, 1].into();
        let pm = assign_positions(&t, 2, &low, 1.0, -1.0).unwrap();
        let plain = PositionMap::consecutive(5, Region::Context);
        assert_eq!(pm.positions, plain.positions);
    }

    #[test]
    fn empty_low_set_matches_consecutive_bitwise() {
        let t = tags(&[(0, 4), (1, 4)]);
        let pm = assign_positions(&t, 2, &BTreeSet::new(), 0.25, -1.0).unwrap();
        assert_eq!(pm.positions, PositionMap::consecutive(8, Region::Context).positions);
    }

    #[test]
    fn non_context_regions_always_step_one() {
        let mut t = tags(&[(0, 1)]);
        t.extend([TokenTag::Rvis, TokenTag::Query, TokenTag::Generated]);
        let low: BTreeSet<usize> = [0].into();
        let pm = assign_positions(&t, 1, &low, 0.5, -1.0).unwrap();
        assert_eq!(pm.positions, vec![-0.5, 0.5, 1.5, 2.5]);
        assert_eq!(
            pm.regions,
            vec![Region::Context, Region::Rvis, Region::Query, Region::Generated]
        );
    }

    #[test]
    fn strictly_increasing_and_span() {
        let t = tags(&[(0, 5), (1, 5)]);
        let low: BTreeSet<usize> = [1].into();
        let pm = assign_positions(&t, 2, &low, 0.5, -1.0).unwrap();
        assert!(pm.positions.windows(2).all(|w| w[0] < w[1]));
        // span = N_high + alpha * N_low
        assert!((pm.span_from(-1.0) - (5.0 + 0.5 * 5.0)).abs() < 1e-12);
    }

    #[test]
    fn unknown_sentence_index_is_an_error() {
        let t = tags(&[(3, 1)]);
        assert!(matches!(
            assign_positions(&t, 2, &BTreeSet::new(), 0.5, -1.0),
            Err(Error::UnknownSentence(3))
        ));
    }

    #[test]
    fn invalid_alpha_rejected() {
        let t = tags(&[(0, 1)]);
        for alpha in [0.0, -0.5, 1.5] {
            assert!(assign_positions(&t, 1, &BTreeSet::new(), alpha, -1.0).is_err());
        }
    }

    #[test]
    fn push_generated_continues_plus_one() {
        let mut pm = assign_positions(
            &tags(&[(0, 2)]),
            1,
            &[0usize].into_iter().collect(),
            0.5,
            -1.0,
        )
        .unwrap();
        pm.push_generated();
        assert_eq!(*pm.positions.last().unwrap(), 1.0);
        assert_eq!(*pm.regions.last().unwrap(), Region::Generated);
    }
}
