//! The decision layer of the expert ensemble.
//!
//! A gate turns a free-form user requirement into objective tags, selects
//! the experts that cover them, assigns contribution weights, and fuses the
//! experts' normalized per-action scores into one action:
//!
//! 1. objective formulation — requirement text → objective tags,
//! 2. expert selection — objective tags → expert ids,
//! 3. inference combination — weighted sum of normalized scores → argmax,
//! 4. decision execution — apply the fused action to the environment.
//!
//! Three gates implement the same surface: [`ScriptedGate`] resolves text
//! with an ordered keyword table (the deterministic test double),
//! [`LlmGate`] asks a chat model with a structured-response contract, and
//! [`TrainedGate`] replays a Q-table over discretized weight vectors.

mod llm_gate;
mod scripted;
mod trained;

pub use llm_gate::LlmGate;
pub use scripted::ScriptedGate;
pub use trained::{train_gate, CurvePoint, GateHyperparams, TrainedGate};

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::experts::{self, ExpertError, ExpertModel, ExpertObjective};
use crate::llm::LlmError;
use crate::maze::{self, MazeConfig, MazeError, MazeState, Mission};
use crate::wireless::{self, QosMetric, WirelessContext, WirelessError};

#[derive(Debug, Error)]
pub enum GateError {
    #[error("requirement not recognized: {0}")]
    UnrecognizedRequirement(String),
    #[error("no expert available for objective '{objective}'")]
    NoExpertAvailable { objective: String },
    #[error("expert registry is empty")]
    EmptyRegistry,
    #[error("domain mismatch: {0}")]
    DomainMismatch(String),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("invalid gate response: {0}")]
    InvalidResponse(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Expert(#[from] ExpertError),
    #[error(transparent)]
    Maze(#[from] MazeError),
    #[error(transparent)]
    Wireless(#[from] WirelessError),
}

/// Objective vocabulary shared by all gates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObjectiveTag {
    GoToGoal,
    CollectPrize,
    AvoidTrap,
    #[serde(rename = "minimize-OP")]
    MinimizeOp,
    #[serde(rename = "maximize-DR")]
    MaximizeDr,
    #[serde(rename = "maximize-TP")]
    MaximizeTp,
    #[serde(rename = "minimize-BEP")]
    MinimizeBep,
}

impl ObjectiveTag {
    pub const ALL: [ObjectiveTag; 7] = [
        ObjectiveTag::GoToGoal,
        ObjectiveTag::CollectPrize,
        ObjectiveTag::AvoidTrap,
        ObjectiveTag::MinimizeOp,
        ObjectiveTag::MaximizeDr,
        ObjectiveTag::MaximizeTp,
        ObjectiveTag::MinimizeBep,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ObjectiveTag::GoToGoal => "GoToGoal",
            ObjectiveTag::CollectPrize => "CollectPrize",
            ObjectiveTag::AvoidTrap => "AvoidTrap",
            ObjectiveTag::MinimizeOp => "minimize-OP",
            ObjectiveTag::MaximizeDr => "maximize-DR",
            ObjectiveTag::MaximizeTp => "maximize-TP",
            ObjectiveTag::MinimizeBep => "minimize-BEP",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ObjectiveTag::GoToGoal => "reach the goal cell",
            ObjectiveTag::CollectPrize => "collect every prize before finishing",
            ObjectiveTag::AvoidTrap => "never enter a trap cell",
            ObjectiveTag::MinimizeOp => "minimize outage probability",
            ObjectiveTag::MaximizeDr => "maximize data rate",
            ObjectiveTag::MaximizeTp => "maximize throughput",
            ObjectiveTag::MinimizeBep => "minimize bit error probability",
        }
    }

    /// Which trained-expert objective covers this tag directly.
    pub fn expert_objective(self) -> Option<ExpertObjective> {
        match self {
            ObjectiveTag::GoToGoal => Some(ExpertObjective::GoToGoal),
            ObjectiveTag::CollectPrize => Some(ExpertObjective::CollectPrize),
            ObjectiveTag::AvoidTrap => Some(ExpertObjective::AvoidTrap),
            ObjectiveTag::MinimizeOp => Some(ExpertObjective::OpMetric),
            ObjectiveTag::MaximizeDr => Some(ExpertObjective::DrMetric),
            ObjectiveTag::MaximizeTp | ObjectiveTag::MinimizeBep => None,
        }
    }
}

impl fmt::Display for ObjectiveTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for ObjectiveTag {
    type Err = GateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ObjectiveTag::ALL
            .into_iter()
            .find(|t| t.label() == s)
            .ok_or_else(|| GateError::InvalidResponse(format!("unknown objective tag '{s}'")))
    }
}

/// Formulated task objective: an ordered list of tags plus how they were
/// derived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub tags: Vec<ObjectiveTag>,
    pub derivation: String,
}

impl Objective {
    pub fn new(tags: Vec<ObjectiveTag>, derivation: impl Into<String>) -> Self {
        Self { tags, derivation: derivation.into() }
    }

    /// Replaces composite tags with the primitive ones experts exist for:
    /// maximize-TP decomposes into {minimize-OP, maximize-DR}.
    pub fn decompose_composites(mut self) -> Self {
        if self.tags.contains(&ObjectiveTag::MaximizeTp) {
            let mut tags = Vec::new();
            for tag in self.tags {
                match tag {
                    ObjectiveTag::MaximizeTp => {
                        for sub in [ObjectiveTag::MinimizeOp, ObjectiveTag::MaximizeDr] {
                            if !tags.contains(&sub) {
                                tags.push(sub);
                            }
                        }
                    }
                    other if !tags.contains(&other) => tags.push(other),
                    _ => {}
                }
            }
            self.tags = tags;
            self.derivation.push_str("; maximize-TP decomposed into minimize-OP + maximize-DR");
        }
        self
    }

    pub fn labels(&self) -> Vec<&'static str> {
        self.tags.iter().map(|t| t.label()).collect()
    }
}

/// Extra task information handed to the gate alongside the requirement.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskContext {
    Wireless(WirelessContext),
    Maze(MazeConfig),
}

impl TaskContext {
    /// One-paragraph summary interpolated into gate prompts.
    pub fn summary(&self) -> String {
        match self {
            TaskContext::Wireless(ctx) => {
                let ch = &ctx.channel;
                format!(
                    "Wireless BS-user pair {}/{}: {} antennas, fading scale {}, distance {} m, \
                     path loss exponent {}, noise power {} W, bandwidth {} Hz, outage threshold \
                     {} (linear SNR). Power settings: {:?} W, threshold {} W, payment coeff {}, \
                     cost coeff {} per W.",
                    ctx.pair_index,
                    ctx.num_users,
                    ch.num_antennas,
                    ch.fading_scale,
                    ch.distance,
                    ch.path_loss_exponent,
                    ch.noise_power,
                    ch.bandwidth,
                    ch.outage_threshold,
                    ctx.market.power_grid,
                    ctx.market.power_threshold,
                    ctx.market.payment_coeff,
                    ctx.market.cost_coeff,
                )
            }
            TaskContext::Maze(cfg) => format!(
                "Grid maze {}x{} (G goal, P prize, T trap, # wall):\n{}",
                cfg.rows,
                cfg.cols,
                maze::render_ascii(cfg, None)
            ),
        }
    }
}

/// Free-form requirement text plus optional task context.
#[derive(Debug, Clone, PartialEq)]
pub struct UserRequirement {
    pub text: String,
    pub context: Option<TaskContext>,
}

impl UserRequirement {
    pub fn new(text: impl Into<String>) -> Result<Self, GateError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(GateError::UnrecognizedRequirement("empty requirement text".into()));
        }
        Ok(Self { text, context: None })
    }

    pub fn with_context(mut self, context: TaskContext) -> Self {
        self.context = Some(context);
        self
    }
}

/// A gate's full output for one decision step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateDecision {
    pub objectives: Objective,
    pub selected_expert_ids: Vec<String>,
    /// Nonnegative, sums to 1, one per selected expert.
    pub weights: Vec<f64>,
    /// Index into the shared action list.
    pub fused_action: usize,
    pub fused_action_label: String,
    /// Weighted sum of normalized scores per action.
    pub fused_scores: Vec<f64>,
    /// Human-readable log of the four steps.
    pub trace: Vec<String>,
}

impl GateDecision {
    /// The structural invariants every decision must satisfy.
    pub fn check_invariants(&self) -> Result<(), GateError> {
        if self.selected_expert_ids.is_empty() {
            return Err(GateError::InvalidWeights("no experts selected".into()));
        }
        if self.weights.len() != self.selected_expert_ids.len() {
            return Err(GateError::InvalidWeights(format!(
                "{} weights for {} experts",
                self.weights.len(),
                self.selected_expert_ids.len()
            )));
        }
        if self.weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(GateError::InvalidWeights("negative or NaN weight".into()));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(GateError::InvalidWeights(format!("weights sum to {sum}")));
        }
        if self.fused_action >= self.fused_scores.len() {
            return Err(GateError::InvalidWeights("fused action outside the action set".into()));
        }
        Ok(())
    }
}

/// Which gate implementation is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateKind {
    Scripted,
    Llm,
    Trained,
}

impl std::str::FromStr for GateKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scripted" => Ok(GateKind::Scripted),
            "llm" => Ok(GateKind::Llm),
            "trained" => Ok(GateKind::Trained),
            other => Err(format!("unknown gate kind '{other}' (scripted|llm|trained)")),
        }
    }
}

/// Runtime-polymorphic gate.
pub enum Gate {
    Scripted(ScriptedGate),
    Llm(LlmGate),
    Trained(TrainedGate),
}

impl Gate {
    pub fn kind(&self) -> GateKind {
        match self {
            Gate::Scripted(_) => GateKind::Scripted,
            Gate::Llm(_) => GateKind::Llm,
            Gate::Trained(_) => GateKind::Trained,
        }
    }

    /// Step 1: requirement text → objective tags.
    pub fn formulate_objective(&self, req: &UserRequirement) -> Result<Objective, GateError> {
        match self {
            Gate::Scripted(g) => g.formulate(req),
            Gate::Llm(g) => g.formulate(req),
            Gate::Trained(g) => g.formulate(),
        }
    }

    /// Step 2: objective tags → expert ids from the registry.
    pub fn select_experts(
        &self,
        obj: &Objective,
        registry: &[ExpertModel],
    ) -> Result<Vec<String>, GateError> {
        match self {
            Gate::Scripted(_) => select_by_objective(obj, registry),
            Gate::Llm(g) => g.select(obj, registry),
            Gate::Trained(g) => g.select(registry),
        }
    }

    /// Step 3: weighted fusion of the selected experts' scores at one state.
    pub fn combine_inferences(
        &self,
        selected: &[String],
        obj: &Objective,
        state_key: &str,
        registry: &[ExpertModel],
        context: Option<&TaskContext>,
    ) -> Result<GateDecision, GateError> {
        let models = resolve_ids(selected, registry)?;
        let decision = match self {
            Gate::Scripted(_) => {
                let weights = vec![1.0 / models.len() as f64; models.len()];
                fuse(&models, &weights, obj, state_key, "equal weights (scripted gate)")
            }
            Gate::Llm(g) => g.combine(&models, obj, state_key, context),
            Gate::Trained(g) => g.combine(&models, obj, state_key),
        }?;
        decision.check_invariants()?;
        Ok(decision)
    }
}

/// Tag-directed selection: every objective tag must be covered by at least
/// one registry expert. Shared by the scripted and trained gates and used
/// by the LLM gate for coverage validation.
pub fn select_by_objective(
    obj: &Objective,
    registry: &[ExpertModel],
) -> Result<Vec<String>, GateError> {
    if registry.is_empty() {
        return Err(GateError::EmptyRegistry);
    }
    let mut selected: Vec<String> = Vec::new();
    for &tag in &obj.tags {
        let want = tag.expert_objective();
        let covering: Vec<&ExpertModel> = registry
            .iter()
            .filter(|m| Some(m.objective) == want)
            .collect();
        if covering.is_empty() {
            return Err(GateError::NoExpertAvailable { objective: tag.label().to_string() });
        }
        for m in covering {
            if !selected.contains(&m.id) {
                selected.push(m.id.clone());
            }
        }
    }
    Ok(selected)
}

pub(crate) fn resolve_ids<'a>(
    ids: &[String],
    registry: &'a [ExpertModel],
) -> Result<Vec<&'a ExpertModel>, GateError> {
    if ids.is_empty() {
        return Err(GateError::InvalidWeights("no experts selected".into()));
    }
    ids.iter()
        .map(|id| {
            registry
                .iter()
                .find(|m| &m.id == id)
                .ok_or_else(|| GateError::InvalidResponse(format!("unknown expert id '{id}'")))
        })
        .collect()
}

/// Core fusion rule: fused score per action = Σᵢ wᵢ·normalized_scoreᵢ;
/// argmax with ties toward the lowest action index (which is the lowest
/// power for NSP experts, whose action lists ascend).
pub(crate) fn fuse(
    models: &[&ExpertModel],
    weights: &[f64],
    obj: &Objective,
    state_key: &str,
    weight_note: &str,
) -> Result<GateDecision, GateError> {
    let first = models.first().ok_or(GateError::EmptyRegistry)?;
    for m in models.iter().skip(1) {
        if m.domain != first.domain {
            return Err(GateError::DomainMismatch(format!(
                "experts '{}' and '{}' live in different domains",
                first.id, m.id
            )));
        }
        if m.actions != first.actions {
            return Err(GateError::DomainMismatch(format!(
                "experts '{}' and '{}' expose different action sets",
                first.id, m.id
            )));
        }
    }
    if weights.len() != models.len() {
        return Err(GateError::InvalidWeights(format!(
            "{} weights for {} experts",
            weights.len(),
            models.len()
        )));
    }
    if weights.iter().any(|&w| !w.is_finite() || w < 0.0) {
        return Err(GateError::InvalidWeights(format!("weights must be >= 0, got {weights:?}")));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(GateError::InvalidWeights("weights sum to zero".into()));
    }
    let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();

    let mut fused = vec![0.0f64; first.actions.len()];
    let mut trace = vec![
        format!("objectives: {}", obj.labels().join(", ")),
        format!(
            "experts: {}",
            models.iter().map(|m| m.id.as_str()).collect::<Vec<_>>().join(", ")
        ),
    ];
    for (model, &w) in models.iter().zip(&weights) {
        let scores = experts::score_actions(model, state_key)?;
        if scores.unseen_state {
            trace.push(format!("{}: state '{state_key}' unseen, uniform scores", model.id));
        }
        for (f, s) in fused.iter_mut().zip(&scores.scores) {
            *f += w * s;
        }
    }
    let mut best = 0;
    for (i, &v) in fused.iter().enumerate().skip(1) {
        if v > fused[best] {
            best = i;
        }
    }
    trace.push(format!("weights: {weights:?} ({weight_note})"));
    trace.push(format!("fused action: {} (index {best})", first.actions[best]));

    Ok(GateDecision {
        objectives: obj.clone(),
        selected_expert_ids: models.iter().map(|m| m.id.clone()).collect(),
        weights,
        fused_action: best,
        fused_action_label: first.actions[best].clone(),
        fused_scores: fused,
        trace,
    })
}

/// The environment a decision executes against.
pub enum ExecutionEnv<'a> {
    Maze { cfg: &'a MazeConfig, state: &'a MazeState, mission: Mission },
    Nsp { ctx: &'a WirelessContext },
}

/// What executing a decision produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OutcomeRecord {
    Maze {
        next_state: MazeState,
        reward: f64,
        entered_trap: bool,
        collected_prize: bool,
        reached_goal: bool,
    },
    Nsp(NspOutcome),
}

/// Committed power setting with every QoS metric and utility evaluated at
/// it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NspOutcome {
    pub power: f64,
    pub outage_probability: f64,
    pub data_rate: f64,
    pub throughput: f64,
    pub utility_op: f64,
    pub utility_dr: f64,
    pub utility_tp: f64,
}

/// Step 4: apply the fused action to the environment.
pub fn execute_decision(
    decision: &GateDecision,
    env: &ExecutionEnv<'_>,
) -> Result<OutcomeRecord, GateError> {
    decision.check_invariants()?;
    match env {
        ExecutionEnv::Maze { cfg, state, mission } => {
            let action = maze::Action::from_index(decision.fused_action).ok_or_else(|| {
                GateError::DomainMismatch(format!(
                    "action index {} is not a maze move",
                    decision.fused_action
                ))
            })?;
            let out = maze::step_full(cfg, state, action)?;
            Ok(OutcomeRecord::Maze {
                next_state: out.state,
                reward: mission.reward(&out.reward),
                entered_trap: out.entered_trap,
                collected_prize: out.collected_prize,
                reached_goal: out.reached_goal,
            })
        }
        ExecutionEnv::Nsp { ctx } => {
            let power: f64 = decision.fused_action_label.parse().map_err(|_| {
                GateError::DomainMismatch(format!(
                    "fused action '{}' is not a power setting",
                    decision.fused_action_label
                ))
            })?;
            let op = wireless::outage_probability(&ctx.channel, power)?;
            let dr = wireless::data_rate(&ctx.channel, power)?;
            let tp = (1.0 - op) * dr;
            Ok(OutcomeRecord::Nsp(NspOutcome {
                power,
                outage_probability: op,
                data_rate: dr,
                throughput: tp,
                utility_op: wireless::nsp_utility(ctx, QosMetric::OpComplement, power)?.utility,
                utility_dr: wireless::nsp_utility(ctx, QosMetric::DataRate, power)?.utility,
                utility_tp: wireless::nsp_utility(ctx, QosMetric::Throughput, power)?.utility,
            }))
        }
    }
}

/// Runs one maze episode with per-step gate decisions (the Step 1–4 loop).
/// Gate errors abort the episode and surface to the caller.
pub fn run_gated_episode(
    gate: &Gate,
    registry: &[ExpertModel],
    selected: &[String],
    obj: &Objective,
    cfg: &MazeConfig,
    mission: Mission,
) -> Result<maze::EpisodeRecord, GateError> {
    let mut state = maze::reset(cfg)?;
    let mut trajectory = Vec::new();
    let mut total_reward = 0.0;
    let mut traps_entered = 0u32;
    let mut prizes_collected = 0u32;
    let mut reached_goal = false;
    let context = TaskContext::Maze(cfg.clone());

    while !state.terminal {
        let decision = gate.combine_inferences(
            selected,
            obj,
            &state.state_key(),
            registry,
            Some(&context),
        )?;
        let outcome = execute_decision(
            &decision,
            &ExecutionEnv::Maze { cfg, state: &state, mission },
        )?;
        let OutcomeRecord::Maze {
            next_state,
            reward,
            entered_trap,
            collected_prize,
            reached_goal: goal_now,
        } = outcome
        else {
            unreachable!("maze execution returns maze outcomes");
        };
        total_reward += reward;
        traps_entered += entered_trap as u32;
        prizes_collected += collected_prize as u32;
        reached_goal |= goal_now;
        trajectory.push(maze::TrajectoryStep {
            action: maze::Action::from_index(decision.fused_action).unwrap(),
            cell_after: next_state.walker,
            reward,
        });
        state = next_state;
    }

    let all_prizes = state.collected_mask == cfg.full_prize_mask();
    Ok(maze::EpisodeRecord {
        mission,
        start: cfg.start,
        steps: state.steps_taken,
        success: mission.success(reached_goal, all_prizes, traps_entered),
        total_reward,
        trajectory,
        reached_goal,
        traps_entered,
        prizes_collected,
    })
}
