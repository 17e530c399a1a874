//! Deterministic keyword gate: the test double that stands in for the LLM.

use super::{GateError, Objective, ObjectiveTag, UserRequirement};

/// Ordered keyword table. Every rule whose keywords appear in the text
/// contributes its objectives; the table order fixes the output order and
/// resolves duplicates toward the earliest rule.
///
/// Keywords match on token prefixes ("safe" matches "safest"), never on
/// interior substrings ("rate" does not match "accurate"); multi-word
/// keywords match consecutive tokens.
const KEYWORD_RULES: &[(&[&str], &[ObjectiveTag])] = &[
    (&["safe", "trap"], &[ObjectiveTag::AvoidTrap]),
    (&["prize", "explore", "obtain"], &[ObjectiveTag::CollectPrize]),
    (&["goal", "arrive", "shortest"], &[ObjectiveTag::GoToGoal]),
    (&["call", "continuity", "uninterrupted voice"], &[ObjectiveTag::MinimizeOp]),
    (&["streaming", "video", "rate", "buffer"], &[ObjectiveTag::MaximizeDr]),
    (
        &["seamless", "gaming", "smooth"],
        &[ObjectiveTag::MinimizeOp, ObjectiveTag::MaximizeDr],
    ),
    (&["accuracy", "image", "medical"], &[ObjectiveTag::MinimizeBep]),
];

/// Rule-table gate. Pure: identical text always yields the identical
/// objective; selection and fusion (equal weights) are handled by the
/// shared paths in [`super::Gate`].
#[derive(Debug, Clone, Copy, Default)]
pub struct ScriptedGate;

impl ScriptedGate {
    pub fn formulate(&self, req: &UserRequirement) -> Result<Objective, GateError> {
        let tokens: Vec<String> = req
            .text
            .to_lowercase()
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect();

        let mut tags: Vec<ObjectiveTag> = Vec::new();
        let mut matched: Vec<&str> = Vec::new();
        for (keywords, rule_tags) in KEYWORD_RULES {
            for kw in *keywords {
                if phrase_matches(&tokens, kw) {
                    matched.push(kw);
                    for &tag in *rule_tags {
                        if !tags.contains(&tag) {
                            tags.push(tag);
                        }
                    }
                    break;
                }
            }
        }
        if tags.is_empty() {
            return Err(GateError::UnrecognizedRequirement(req.text.clone()));
        }
        Ok(Objective::new(tags, format!("keyword rules hit: {}", matched.join(", ")))
            .decompose_composites())
    }
}

/// Does the (possibly multi-word) keyword occur as a run of token prefixes?
fn phrase_matches(tokens: &[String], keyword: &str) -> bool {
    let words: Vec<&str> = keyword.split_whitespace().collect();
    if words.is_empty() || tokens.len() < words.len() {
        return false;
    }
    tokens.windows(words.len()).any(|window| {
        window.iter().zip(&words).all(|(token, word)| token.starts_with(word))
    })
}
