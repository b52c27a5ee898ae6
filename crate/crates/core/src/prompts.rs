//! Prompt templates, shipped as text assets and filled by simple placeholder
//! substitution. The template files are the source of truth; they are kept
//! verbatim (including their original spellings), so do not "fix" them.

pub const PARAMETRIC: &str = include_str!("assets/prompts/parametric.txt");
pub const REWRITE: &str = include_str!("assets/prompts/rewrite.txt");
pub const RATIONALE: &str = include_str!("assets/prompts/rationale.txt");
pub const CONFLICT_ANALYSIS: &str = include_str!("assets/prompts/conflict_analysis.txt");
pub const FINAL_ANSWER: &str = include_str!("assets/prompts/final_answer.txt");

/// Query-only prompt for the parametric decoding pass and base mode.
pub const DIRECT_ANSWER: &str = "Here is the question: {Question}. Short Answer:";

/// Final-answer prompt without the focus-feature clause, used when conflict
/// reasoning is disabled.
pub const PLAIN_RAG_ANSWER: &str =
    "Here is the question: {Question}. Here is the retrieved information: {Retrieved Information}. Short Answer:";

pub fn parametric(question: &str) -> String {
    PARAMETRIC.replace("{Question}", question)
}

pub fn rewrite(question: &str) -> String {
    REWRITE.replace("{Question}", question)
}

pub fn rationale(question: &str, section: &str) -> String {
    RATIONALE
        .replace("{Question}", question)
        .replace("{section}", section)
}

pub fn conflict_analysis(question: &str, reasons_text: &str) -> String {
    CONFLICT_ANALYSIS
        .replace("{Question}", question)
        .replace("{Reasons text}", reasons_text)
}

pub fn final_answer(question: &str, features: &str, retrieved: &str) -> String {
    FINAL_ANSWER
        .replace("{Question}", question)
        .replace("{Features}", features)
        .replace("{Retrieved Information}", retrieved)
}

pub fn direct_answer(question: &str) -> String {
    DIRECT_ANSWER.replace("{Question}", question)
}

pub fn plain_rag_answer(question: &str, retrieved: &str) -> String {
    PLAIN_RAG_ANSWER
        .replace("{Question}", question)
        .replace("{Retrieved Information}", retrieved)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substitution_inserts_question_verbatim() {
        let p = parametric("What bird is this?");
        assert!(p.contains("Here is the question: What bird is this? Please describe"));
        assert!(!p.contains("{Question}"));
    }

    #[test]
    fn rationale_fills_both_slots() {
        let p = rationale("Q?", "SECTION TEXT");
        assert!(p.contains("Here is the question: Q?,"));
        assert!(p.contains("the selected section:SECTION TEXT,"));
    }

    #[test]
    fn final_answer_fills_three_slots() {
        let p = final_answer("Q?", "ring on stem", "INFO");
        assert!(p.contains("<reason>ring on stem</reason>"));
        assert!(p.contains("the retrieved information: INFO. Short Answer:"));
    }

    #[test]
    fn templates_have_no_trailing_newline() {
        for t in [PARAMETRIC, REWRITE, RATIONALE, CONFLICT_ANALYSIS, FINAL_ANSWER] {
            assert!(!t.ends_with('\n'));
        }
    }
}
