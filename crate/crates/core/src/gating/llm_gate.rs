//! Chat-model gate: one structured round per step, with validation and a
//! bounded retry budget for malformed replies.

use serde::Deserialize;

use super::{
    fuse, select_by_objective, GateDecision, GateError, Objective, ObjectiveTag, TaskContext,
    UserRequirement,
};
use crate::experts::{self, ExpertModel};
use crate::llm::{self, ChatMessage, ChatRequest, LlmBackend};

/// Versioned prompt templates shipped with the crate.
const FORMULATE_TEMPLATE: &str = include_str!("../../prompts/formulate.v1.txt");
const SELECT_TEMPLATE: &str = include_str!("../../prompts/select.v1.txt");
const COMBINE_TEMPLATE: &str = include_str!("../../prompts/combine.v1.txt");

/// Retries after the first malformed reply before giving up.
const RESPONSE_RETRIES: u32 = 2;

/// Fixed follow-up sent after an invalid reply. Kept constant so recorded
/// transcripts cover the retry turns too.
pub(crate) const CORRECTION_PROMPT: &str = "Your previous reply was invalid. Reply again with \
a single fenced code block containing exactly one JSON object of the shape {\"objectives\": \
[...], \"experts\": [...], \"weights\": [...], \"rationale\": \"...\"} and nothing else.";

const SYSTEM_PROMPT: &str = "You are the gate of a mixture-of-experts controller. Always reply \
with a single fenced code block containing exactly one JSON object with the keys objectives, \
experts, weights, rationale.";

/// The only reply shape the gate accepts: one fenced block holding exactly
/// this object.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GateReply {
    objectives: Vec<String>,
    experts: Vec<String>,
    weights: Vec<f64>,
    #[allow(dead_code)]
    rationale: String,
}

pub(crate) fn initial_messages(prompt: &str) -> Vec<ChatMessage> {
    vec![ChatMessage::system(SYSTEM_PROMPT), ChatMessage::user(prompt)]
}

pub(crate) fn formulate_prompt(req: &UserRequirement) -> String {
    let vocabulary = ObjectiveTag::ALL
        .iter()
        .map(|t| format!("- {}: {}", t.label(), t.description()))
        .collect::<Vec<_>>()
        .join("\n");
    let context = req
        .context
        .as_ref()
        .map(TaskContext::summary)
        .unwrap_or_else(|| "(none provided)".into());
    FORMULATE_TEMPLATE
        .replace("{{vocabulary}}", &vocabulary)
        .replace("{{requirement}}", &req.text)
        .replace("{{context}}", &context)
}

pub(crate) fn select_prompt(obj: &Objective, registry: &[ExpertModel]) -> String {
    let listing = registry
        .iter()
        .map(|m| {
            format!(
                "- id: {}, objective: {}, domain: {:?}, actions: [{}]",
                m.id,
                m.objective,
                m.domain,
                m.actions.join(", ")
            )
        })
        .collect::<Vec<_>>()
        .join("\n");
    SELECT_TEMPLATE
        .replace("{{objectives}}", &obj.labels().join(", "))
        .replace("{{registry}}", &listing)
}

pub(crate) fn combine_prompt(
    models: &[&ExpertModel],
    obj: &Objective,
    state_key: &str,
    context: Option<&TaskContext>,
) -> Result<String, GateError> {
    let mut score_lines = Vec::new();
    for m in models {
        let scores = experts::score_actions(m, state_key)?;
        let per_action = m
            .actions
            .iter()
            .zip(&scores.scores)
            .map(|(a, s)| format!("{a}: {s:.4}"))
            .collect::<Vec<_>>()
            .join(", ");
        score_lines.push(format!("- {} ({}): {per_action}", m.id, m.objective));
    }
    Ok(COMBINE_TEMPLATE
        .replace("{{objectives}}", &obj.labels().join(", "))
        .replace("{{scores}}", &score_lines.join("\n"))
        .replace(
            "{{context}}",
            &context.map(TaskContext::summary).unwrap_or_else(|| "(none provided)".into()),
        ))
}

/// Gate backed by a chat-completion model. Requests run at temperature 0;
/// the backend decides whether they hit the network or a replay transcript.
pub struct LlmGate {
    backend: LlmBackend,
    model: String,
}

impl LlmGate {
    pub fn new(backend: LlmBackend, model: impl Into<String>) -> Self {
        Self { backend, model: model.into() }
    }

    /// Hands the backend back (to extract a recorded transcript).
    pub fn into_backend(self) -> LlmBackend {
        self.backend
    }

    pub fn formulate(&self, req: &UserRequirement) -> Result<Objective, GateError> {
        let prompt = formulate_prompt(req);
        let (tags, rationale) = self.converse(&prompt, |reply| {
            if reply.objectives.is_empty() {
                return Err("objectives must not be empty".into());
            }
            reply
                .objectives
                .iter()
                .map(|s| s.parse::<ObjectiveTag>().map_err(|_| format!("unknown tag '{s}'")))
                .collect::<Result<Vec<_>, _>>()
        })?;
        Ok(Objective::new(tags, format!("LLM formulation: {rationale}")).decompose_composites())
    }

    pub fn select(
        &self,
        obj: &Objective,
        registry: &[ExpertModel],
    ) -> Result<Vec<String>, GateError> {
        if registry.is_empty() {
            return Err(GateError::EmptyRegistry);
        }
        // Coverage must be possible at all before asking the model; an
        // uncovered tag is a registry gap, not a reply defect.
        select_by_objective(obj, registry)?;

        let prompt = select_prompt(obj, registry);
        let (ids, _) = self.converse(&prompt, |reply| {
            if reply.experts.is_empty() {
                return Err("experts must not be empty".into());
            }
            for id in &reply.experts {
                if !registry.iter().any(|m| &m.id == id) {
                    return Err(format!("'{id}' is not a registry expert id"));
                }
            }
            for &tag in &obj.tags {
                let covered = reply.experts.iter().any(|id| {
                    registry
                        .iter()
                        .any(|m| &m.id == id && Some(m.objective) == tag.expert_objective())
                });
                if !covered {
                    return Err(format!("objective {tag} is not covered by the selection"));
                }
            }
            Ok(reply.experts.clone())
        })?;
        Ok(ids)
    }

    pub fn combine(
        &self,
        models: &[&ExpertModel],
        obj: &Objective,
        state_key: &str,
        context: Option<&TaskContext>,
    ) -> Result<GateDecision, GateError> {
        let prompt = combine_prompt(models, obj, state_key, context)?;
        let (weights, rationale) = self.converse(&prompt, |reply| {
            if reply.weights.len() != models.len() {
                return Err(format!(
                    "{} weights given for {} experts",
                    reply.weights.len(),
                    models.len()
                ));
            }
            if reply.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(format!("weights must be nonnegative, got {:?}", reply.weights));
            }
            if reply.weights.iter().sum::<f64>() <= 0.0 {
                return Err("weights sum to zero".into());
            }
            Ok(reply.weights.clone())
        })?;
        fuse(models, &weights, obj, state_key, &format!("LLM weights: {rationale}"))
    }

    /// One prompt round with bounded corrective retries: an invalid reply is
    /// appended to the conversation followed by [`CORRECTION_PROMPT`], and
    /// the model is asked again. Schema-invalid replies never escape this
    /// loop.
    fn converse<T>(
        &self,
        prompt: &str,
        validate: impl Fn(&GateReply) -> Result<T, String>,
    ) -> Result<(T, String), GateError> {
        let mut messages = initial_messages(prompt);
        let mut last_err = String::new();
        for _ in 0..=RESPONSE_RETRIES {
            let request = ChatRequest::new(self.model.clone(), messages.clone());
            let response = llm::complete(&self.backend, &request)?;
            match extract_reply(&response.content).and_then(|r| {
                let rationale = r.rationale.clone();
                validate(&r).map(|v| (v, rationale))
            }) {
                Ok(result) => return Ok(result),
                Err(err) => last_err = err,
            }
            log::warn!("gate reply rejected ({last_err}); requesting a corrected reply");
            messages.push(ChatMessage::assistant(response.content));
            messages.push(ChatMessage::user(CORRECTION_PROMPT));
        }
        Err(GateError::InvalidResponse(format!(
            "no valid reply after {RESPONSE_RETRIES} retries: {last_err}"
        )))
    }
}

/// Pulls the single fenced block out of a reply and parses the JSON object.
fn extract_reply(content: &str) -> Result<GateReply, String> {
    let fence_count = content.matches("```").count();
    if fence_count != 2 {
        return Err(format!("expected exactly one fenced block, found {fence_count} fences"));
    }
    let start = content.find("```").unwrap();
    let after = &content[start + 3..];
    let body_start = after.find('\n').map(|i| i + 1).unwrap_or(0);
    let end = after.rfind("```").ok_or("unterminated fenced block")?;
    if body_start > end {
        return Err("empty fenced block".into());
    }
    let body = after[body_start..end].trim();
    serde_json::from_str::<GateReply>(body).map_err(|e| format!("fenced block is not valid: {e}"))
}

#[cfg(test)]
pub(crate) fn reply_block(objectives: &[&str], experts: &[&str], weights: &[f64]) -> String {
    format!(
        "```json\n{}\n```",
        serde_json::json!({
            "objectives": objectives,
            "experts": experts,
            "weights": weights,
            "rationale": "test rationale",
        })
    )
}
