//! Next-token model abstraction.
//!
//! The decoding loop only needs "logits for the next token given tokens and
//! positions", so it is written against [`NextTokenLm`]. The real
//! implementation is the rotary decoder in [`crate::toylm`]; the scripted and
//! pinned models here play the same role the scripted chat stub plays for the
//! VLM: deterministic, hand-traceable behavior for offline runs and tests.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::toylm::{detokenize, PositionMap, ToyLm, EOS_TOKEN};

pub trait NextTokenLm: Send + Sync {
    fn vocab_size(&self) -> usize;
    fn next_logits(&self, tokens: &[u32], positions: &PositionMap) -> Result<Vec<f64>>;
}

impl NextTokenLm for ToyLm {
    fn vocab_size(&self) -> usize {
        self.config().vocab_size
    }

    fn next_logits(&self, tokens: &[u32], positions: &PositionMap) -> Result<Vec<f64>> {
        self.forward(tokens, positions)
    }
}

/// One scripted continuation: when `matches` occurs in the decoded sequence
/// text, the model spells out `completion` byte by byte, then EOS.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LmRule {
    pub matches: String,
    pub completion: String,
}

/// Scripted next-token model over the byte vocabulary (256 bytes + EOS).
///
/// At each call the decoded text selects the first matching rule; the next
/// target byte is `completion[k]` where `k` is the longest prefix of the
/// completion that the text already ends with. Logits are `floor` everywhere
/// and `peak` on the target, so greedy decoding spells the completion exactly
/// while the distribution stays smooth enough for divergence and entropy
/// signals to be non-degenerate. Positions are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedLm {
    pub rules: Vec<LmRule>,
    /// Completion used when no rule matches; empty means immediate EOS.
    pub fallback_completion: String,
    pub peak: f64,
    pub floor: f64,
}

pub const SCRIPTED_VOCAB: usize = 257;

impl ScriptedLm {
    pub fn new(rules: Vec<LmRule>) -> Self {
        ScriptedLm {
            rules,
            fallback_completion: String::new(),
            peak: 8.0,
            floor: 0.0,
        }
    }

    fn target_token(&self, text: &str) -> u32 {
        let completion = self
            .rules
            .iter()
            .find(|r| text.contains(&r.matches))
            .map(|r| r.completion.as_str())
            .unwrap_or(&self.fallback_completion);
        let comp = completion.as_bytes();
        let text_bytes = text.as_bytes();
        let mut emitted = 0;
        for k in (1..=comp.len().min(text_bytes.len())).rev() {
            if text_bytes.ends_with(&comp[..k]) {
                emitted = k;
                break;
            }
        }
        match comp.get(emitted) {
            Some(&b) => u32::from(b),
            None => EOS_TOKEN,
        }
    }
}

impl NextTokenLm for ScriptedLm {
    fn vocab_size(&self) -> usize {
        SCRIPTED_VOCAB
    }

    fn next_logits(&self, tokens: &[u32], _positions: &PositionMap) -> Result<Vec<f64>> {
        let text = detokenize(tokens);
        let target = self.target_token(&text) as usize;
        let mut logits = vec![self.floor; SCRIPTED_VOCAB];
        logits[target] = self.peak;
        Ok(logits)
    }
}

/// Fixed per-step logits, indexed by how many tokens have been appended past
/// `prompt_len`; `after` is returned once the steps are exhausted.
pub struct PinnedLm {
    pub prompt_len: usize,
    pub steps: Vec<Vec<f64>>,
    pub after: Vec<f64>,
}

impl NextTokenLm for PinnedLm {
    fn vocab_size(&self) -> usize {
        self.after.len()
    }

    fn next_logits(&self, tokens: &[u32], _positions: &PositionMap) -> Result<Vec<f64>> {
        let step = tokens.len().saturating_sub(self.prompt_len);
        Ok(self.steps.get(step).unwrap_or(&self.after).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toylm::{tokenize, Region};

    fn pm(n: usize) -> PositionMap {
        PositionMap::consecutive(n, Region::Query)
    }

    #[test]
    fn scripted_spells_completion_then_eos() {
        let lm = ScriptedLm::new(vec![LmRule {
            matches: "Short Answer:".into(),
            completion: "ok".into(),
        }]);
        let mut tokens = tokenize("Q. Short Answer:");
        let l1 = lm.next_logits(&tokens, &pm(tokens.len())).unwrap();
        assert_eq!(argmax(&l1), u32::from(b'o'));
        tokens.push(u32::from(b'o'));
        let l2 = lm.next_logits(&tokens, &pm(tokens.len())).unwrap();
        assert_eq!(argmax(&l2), u32::from(b'k'));
        tokens.push(u32::from(b'k'));
        let l3 = lm.next_logits(&tokens, &pm(tokens.len())).unwrap();
        assert_eq!(argmax(&l3), EOS_TOKEN);
    }

    #[test]
    fn scripted_first_rule_wins_and_fallback_is_eos() {
        let lm = ScriptedLm::new(vec![
            LmRule {
                matches: "fact".into(),
                completion: "A".into(),
            },
            LmRule {
                matches: "question".into(),
                completion: "B".into(),
            },
        ]);
        let both = tokenize("question with fact");
        assert_eq!(
            argmax(&lm.next_logits(&both, &pm(both.len())).unwrap()),
            u32::from(b'A')
        );
        let neither = tokenize("nothing");
        assert_eq!(
            argmax(&lm.next_logits(&neither, &pm(neither.len())).unwrap()),
            EOS_TOKEN
        );
    }

    fn argmax(logits: &[f64]) -> u32 {
        let mut best = 0;
        for (i, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = i;
            }
        }
        best as u32
    }
}
