//! Expert models: tabular Q-learning policies, one per objective.
//!
//! Maze experts learn a Q-table over `"r,c|prizemask"` state keys with
//! objective-specific reward shaping; power experts are single-state bandits
//! over the discrete power grid whose reward per pull is the market utility
//! of their QoS metric. Models are immutable after training and persist as
//! versioned JSON documents.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::maze::{self, Action, Cell, MazeConfig, MazeError, MazeState, StepReward};
use crate::wireless::{self, QosMetric, WirelessContext, WirelessError};

#[derive(Debug, Error)]
pub enum ExpertError {
    #[error("domain mismatch: {0}")]
    DomainMismatch(String),
    #[error("infeasible power grid: {0}")]
    InfeasibleGrid(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt model file: {0}")]
    CorruptFile(String),
    #[error("model format version {found} unsupported (this build reads version {supported})")]
    VersionMismatch { found: u64, supported: u64 },
    #[error("model file missing field: {0}")]
    MissingField(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Maze(#[from] MazeError),
    #[error(transparent)]
    Wireless(#[from] WirelessError),
}

/// Supported model file format version.
pub const MODEL_FORMAT_VERSION: u64 = 1;

/// Which environment an expert acts in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Maze,
    Power,
}

/// The objective an expert was trained for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExpertObjective {
    GoToGoal,
    CollectPrize,
    AvoidTrap,
    #[serde(rename = "OP-metric")]
    OpMetric,
    #[serde(rename = "DR-metric")]
    DrMetric,
}

impl ExpertObjective {
    pub fn domain(self) -> Domain {
        match self {
            ExpertObjective::GoToGoal
            | ExpertObjective::CollectPrize
            | ExpertObjective::AvoidTrap => Domain::Maze,
            ExpertObjective::OpMetric | ExpertObjective::DrMetric => Domain::Power,
        }
    }

    /// Reward shaping for maze training: which components of the step reward
    /// this objective observes.
    fn shaped_reward(self, r: &StepReward) -> f64 {
        match self {
            ExpertObjective::GoToGoal => r.step + r.goal,
            ExpertObjective::CollectPrize => r.step + r.prize,
            ExpertObjective::AvoidTrap => r.step + r.goal + r.trap,
            _ => r.total(),
        }
    }

    pub fn metric(self) -> Option<QosMetric> {
        match self {
            ExpertObjective::OpMetric => Some(QosMetric::OpComplement),
            ExpertObjective::DrMetric => Some(QosMetric::DataRate),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ExpertObjective::GoToGoal => "GoToGoal",
            ExpertObjective::CollectPrize => "CollectPrize",
            ExpertObjective::AvoidTrap => "AvoidTrap",
            ExpertObjective::OpMetric => "OP-metric",
            ExpertObjective::DrMetric => "DR-metric",
        }
    }

    fn default_id(self) -> &'static str {
        match self {
            ExpertObjective::GoToGoal => "maze-goal-expert",
            ExpertObjective::CollectPrize => "maze-prize-expert",
            ExpertObjective::AvoidTrap => "maze-trap-expert",
            ExpertObjective::OpMetric => "power-op-expert",
            ExpertObjective::DrMetric => "power-dr-expert",
        }
    }
}

impl std::fmt::Display for ExpertObjective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// ε decays linearly from `start` to `end` over the first `decay_fraction`
/// of the episode budget, then stays at `end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_fraction: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self { start: 1.0, end: 0.05, decay_fraction: 0.8 }
    }
}

impl EpsilonSchedule {
    pub fn at(&self, episode: u32, total_episodes: u32) -> f64 {
        let horizon = (total_episodes as f64 * self.decay_fraction).max(1.0);
        let frac = (episode as f64 / horizon).min(1.0);
        self.start + (self.end - self.start) * frac
    }
}

/// Step-size rule for the Q update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LearningRate {
    /// Fixed step size α.
    #[serde(rename = "constant")]
    Constant(f64),
    /// α = 1/n(s, a); with deterministic rewards the Q value is the exact
    /// average of observations.
    #[serde(rename = "inverse-visits")]
    InverseVisits,
}

/// Hyperparameters for maze Q-learning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MazeHyperparams {
    pub episodes: u32,
    pub learning_rate: f64,
    pub discount: f64,
    pub epsilon: EpsilonSchedule,
    /// Start each training episode from a random free cell and prize mask so
    /// the whole table converges, not just the on-path slice.
    pub exploring_starts: bool,
    /// Warn when the final Bellman residual exceeds this.
    pub residual_threshold: f64,
}

impl Default for MazeHyperparams {
    fn default() -> Self {
        Self {
            episodes: 5000,
            learning_rate: 0.1,
            discount: 0.95,
            epsilon: EpsilonSchedule::default(),
            exploring_starts: true,
            residual_threshold: 1e-2,
        }
    }
}

/// Hyperparameters for the power bandit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BanditHyperparams {
    pub pulls: u32,
    pub epsilon: f64,
    pub residual_threshold: f64,
}

impl Default for BanditHyperparams {
    fn default() -> Self {
        Self { pulls: 10_000, epsilon: 0.1, residual_threshold: 1e-6 }
    }
}

/// Provenance of a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub episodes: u32,
    pub learning_rate: LearningRate,
    pub discount: f64,
    pub epsilon: EpsilonSchedule,
    pub seed: u64,
    pub converged: bool,
    pub bellman_residual: f64,
}

/// An immutable trained policy tagged with its objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertModel {
    pub format_version: u64,
    pub id: String,
    pub domain: Domain,
    #[serde(rename = "objective_tag")]
    pub objective: ExpertObjective,
    /// Action labels, in the order Q vectors are indexed.
    pub actions: Vec<String>,
    #[serde(rename = "q")]
    pub q_table: BTreeMap<String, Vec<f64>>,
    pub training_meta: TrainingMeta,
}

/// State key used by power experts (the bandit has a single state).
pub const POWER_STATE_KEY: &str = "*";

impl ExpertModel {
    pub fn validate(&self) -> Result<(), ExpertError> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(ExpertError::VersionMismatch {
                found: self.format_version,
                supported: MODEL_FORMAT_VERSION,
            });
        }
        if self.actions.is_empty() {
            return Err(ExpertError::InvalidModel("empty action set".into()));
        }
        if self.objective.domain() != self.domain {
            return Err(ExpertError::InvalidModel(format!(
                "objective {} does not belong to domain {:?}",
                self.objective, self.domain
            )));
        }
        for (key, row) in &self.q_table {
            if row.len() != self.actions.len() {
                return Err(ExpertError::InvalidModel(format!(
                    "state '{key}' has {} values for {} actions",
                    row.len(),
                    self.actions.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(ExpertError::InvalidModel(format!(
                    "state '{key}' holds a non-finite value"
                )));
            }
        }
        if self.domain == Domain::Power && !self.q_table.contains_key(POWER_STATE_KEY) {
            return Err(ExpertError::InvalidModel(format!(
                "power model lacks the '{POWER_STATE_KEY}' state row"
            )));
        }
        Ok(())
    }

    /// For power experts: the grid power encoded by action index `i`.
    pub fn action_power(&self, i: usize) -> Option<f64> {
        self.actions.get(i).and_then(|s| s.parse().ok())
    }
}

/// Per-action evaluation of one expert at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionScores {
    /// Min-max normalized scores in [0, 1]; all 0.5 when degenerate.
    pub scores: Vec<f64>,
    /// Raw Q values.
    pub raw: Vec<f64>,
    /// Argmax over the raw values, ties toward the lowest index.
    pub argmax: usize,
    /// All raw values equal (nothing to prefer).
    pub degenerate: bool,
    /// The state key was absent from the table (maze only).
    pub unseen_state: bool,
}

fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn min_max_normalize(raw: &[f64]) -> (Vec<f64>, bool) {
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi - lo).is_finite() || hi - lo < 1e-300 {
        return (vec![0.5; raw.len()], true);
    }
    (raw.iter().map(|&v| (v - lo) / (hi - lo)).collect(), false)
}

fn looks_like_maze_key(key: &str) -> bool {
    let Some((cell, mask)) = key.split_once('|') else { return false };
    let Some((r, c)) = cell.split_once(',') else { return false };
    r.parse::<u8>().is_ok() && c.parse::<u8>().is_ok() && mask.parse::<u32>().is_ok()
}

/// Normalized per-action scores of `model` at `state_key`.
///
/// Unseen maze states yield uniform scores with the `unseen_state` flag so
/// gating stays total; querying a model with a key from the wrong domain is
/// an error.
pub fn score_actions(model: &ExpertModel, state_key: &str) -> Result<ActionScores, ExpertError> {
    match model.domain {
        Domain::Power if state_key != POWER_STATE_KEY => {
            return Err(ExpertError::DomainMismatch(format!(
                "power expert '{}' queried with state '{state_key}'",
                model.id
            )));
        }
        Domain::Maze if !looks_like_maze_key(state_key) => {
            return Err(ExpertError::DomainMismatch(format!(
                "maze expert '{}' queried with state '{state_key}'",
                model.id
            )));
        }
        _ => {}
    }
    match model.q_table.get(state_key) {
        Some(raw) => {
            let (scores, degenerate) = min_max_normalize(raw);
            Ok(ActionScores {
                argmax: argmax_lowest(raw),
                scores,
                raw: raw.clone(),
                degenerate,
                unseen_state: false,
            })
        }
        None if model.domain == Domain::Maze => {
            let n = model.actions.len();
            Ok(ActionScores {
                scores: vec![0.5; n],
                raw: vec![0.0; n],
                argmax: 0,
                degenerate: true,
                unseen_state: true,
            })
        }
        None => Err(ExpertError::InvalidModel(format!(
            "power model '{}' has no '{POWER_STATE_KEY}' row",
            model.id
        ))),
    }
}

/// Trains a maze expert with one-step off-policy Q-learning and ε-greedy
/// exploration. Deterministic given `seed`.
pub fn train_maze_expert(
    objective: ExpertObjective,
    cfg: &MazeConfig,
    hp: &MazeHyperparams,
    seed: u64,
) -> Result<ExpertModel, ExpertError> {
    if objective.domain() != Domain::Maze {
        return Err(ExpertError::DomainMismatch(format!(
            "{objective} is not a maze objective"
        )));
    }
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q: BTreeMap<String, Vec<f64>> = BTreeMap::new();

    // Cells an exploring start may begin at: anything passable and non-goal.
    let free_cells: Vec<Cell> = (0..cfg.rows)
        .flat_map(|r| (0..cfg.cols).map(move |c| Cell::new(r, c)))
        .filter(|c| *c != cfg.goal && !cfg.walls.contains(c))
        .collect();
    let n_masks = cfg.full_prize_mask() + 1;

    for episode in 0..hp.episodes {
        let eps = hp.epsilon.at(episode, hp.episodes);
        let mut state = if hp.exploring_starts {
            MazeState {
                walker: free_cells[rng.random_range(0..free_cells.len())],
                collected_mask: rng.random_range(0..n_masks),
                steps_taken: 0,
                terminal: false,
            }
        } else {
            maze::reset(cfg)?
        };
        while !state.terminal {
            let key = state.state_key();
            let action = if rng.random::<f64>() < eps {
                Action::from_index(rng.random_range(0..4)).unwrap()
            } else {
                let row = q.get(&key).map(Vec::as_slice).unwrap_or(&[0.0; 4]);
                Action::from_index(argmax_lowest(row)).unwrap()
            };
            let out = maze::step_full(cfg, &state, action)?;
            let reward = objective.shaped_reward(&out.reward);
            let future = if out.state.terminal {
                0.0
            } else {
                q.get(&out.state.state_key())
                    .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
                    .unwrap_or(0.0)
            };
            let target = reward + hp.discount * future;
            let row = q.entry(key).or_insert_with(|| vec![0.0; 4]);
            row[action.index()] += hp.learning_rate * (target - row[action.index()]);
            state = out.state;
        }
    }

    let residual = maze_bellman_residual(objective, cfg, hp.discount, &q)?;
    let converged = residual <= hp.residual_threshold;
    if !converged {
        log::warn!(
            "{objective} expert finished {} episodes with Bellman residual {residual:.3e} \
             (threshold {:.1e})",
            hp.episodes,
            hp.residual_threshold
        );
    }

    let model = ExpertModel {
        format_version: MODEL_FORMAT_VERSION,
        id: objective.default_id().to_string(),
        domain: Domain::Maze,
        objective,
        actions: Action::ALL.iter().map(|a| a.label().to_string()).collect(),
        q_table: q,
        training_meta: TrainingMeta {
            episodes: hp.episodes,
            learning_rate: LearningRate::Constant(hp.learning_rate),
            discount: hp.discount,
            epsilon: hp.epsilon,
            seed,
            converged,
            bellman_residual: residual,
        },
    };
    model.validate()?;
    Ok(model)
}

/// Max one-step Bellman residual over every stored (state, action) pair.
/// Transitions and shaped rewards are deterministic, so this is exact.
fn maze_bellman_residual(
    objective: ExpertObjective,
    cfg: &MazeConfig,
    discount: f64,
    q: &BTreeMap<String, Vec<f64>>,
) -> Result<f64, ExpertError> {
    let mut worst = 0.0f64;
    for (key, row) in q {
        let state = parse_maze_key(key)
            .ok_or_else(|| ExpertError::InvalidModel(format!("bad state key '{key}'")))?;
        for action in Action::ALL {
            let out = maze::step_full(cfg, &state, action)?;
            let future = if out.state.terminal {
                0.0
            } else {
                q.get(&out.state.state_key())
                    .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
                    .unwrap_or(0.0)
            };
            let target = objective.shaped_reward(&out.reward) + discount * future;
            worst = worst.max((target - row[action.index()]).abs());
        }
    }
    Ok(worst)
}

fn parse_maze_key(key: &str) -> Option<MazeState> {
    let (cell, mask) = key.split_once('|')?;
    let (r, c) = cell.split_once(',')?;
    Some(MazeState {
        walker: Cell::new(r.parse().ok()?, c.parse().ok()?),
        collected_mask: mask.parse().ok()?,
        steps_taken: 0,
        terminal: false,
    })
}

/// Trains a power expert: a single-state ε-greedy bandit over the feasible
/// power grid with 1/n step sizes, so each Q value is the exact average of
/// its (deterministic) utility observations.
///
/// The action set is the feasible subset of the grid — powers whose QoS
/// clears the floor — which keeps the model argmax aligned with the
/// brute-force oracle by construction.
pub fn train_power_expert(
    objective: ExpertObjective,
    ctx: &WirelessContext,
    hp: &BanditHyperparams,
    seed: u64,
) -> Result<ExpertModel, ExpertError> {
    let Some(metric) = objective.metric() else {
        return Err(ExpertError::DomainMismatch(format!(
            "{objective} is not a power objective"
        )));
    };

    // Evaluate the whole grid once to find the feasible action set.
    let mut feasible: Vec<f64> = Vec::new();
    for &p in &ctx.market.power_grid {
        let pt = wireless::nsp_utility(ctx, metric, p)?;
        if pt.feasible {
            feasible.push(p);
        } else {
            log::warn!("power {p} W violates the {metric} QoS floor; excluded from training");
        }
    }
    if feasible.is_empty() {
        return Err(ExpertError::InfeasibleGrid(format!(
            "no grid power satisfies the {metric} QoS floor"
        )));
    }

    let reward = |p: f64| -> Result<f64, ExpertError> {
        Ok(wireless::nsp_utility(ctx, metric, p)?.utility)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = feasible.len();
    let mut q = vec![0.0f64; n];
    let mut visits = vec![0u32; n];

    for pull in 0..hp.pulls {
        // Round-robin through every arm first, then ε-greedy.
        let arm = if (pull as usize) < n {
            pull as usize
        } else if rng.random::<f64>() < hp.epsilon {
            rng.random_range(0..n)
        } else {
            argmax_lowest(&q)
        };
        let r = reward(feasible[arm])?;
        visits[arm] += 1;
        q[arm] += (r - q[arm]) / visits[arm] as f64;
    }

    // Residual = max |r(a) − Q(a)| over arms that were pulled.
    let mut residual = 0.0f64;
    for (arm, &p) in feasible.iter().enumerate() {
        if visits[arm] > 0 {
            residual = residual.max((reward(p)? - q[arm]).abs());
        }
    }
    let converged = residual <= hp.residual_threshold && visits.iter().all(|&v| v > 0);
    if !converged {
        log::warn!(
            "{objective} bandit residual {residual:.3e} after {} pulls (threshold {:.1e})",
            hp.pulls,
            hp.residual_threshold
        );
    }

    let model = ExpertModel {
        format_version: MODEL_FORMAT_VERSION,
        id: objective.default_id().to_string(),
        domain: Domain::Power,
        objective,
        actions: feasible.iter().map(|p| format!("{p}")).collect(),
        q_table: BTreeMap::from([(POWER_STATE_KEY.to_string(), q)]),
        training_meta: TrainingMeta {
            episodes: hp.pulls,
            learning_rate: LearningRate::InverseVisits,
            discount: 1.0,
            epsilon: EpsilonSchedule { start: hp.epsilon, end: hp.epsilon, decay_fraction: 1.0 },
            seed,
            converged,
            bellman_residual: residual,
        },
    };
    model.validate()?;
    Ok(model)
}

/// Greedy maze policy backed by an expert's Q-table.
pub struct GreedyExpertPolicy<'a>(pub &'a ExpertModel);

impl maze::MazePolicy for GreedyExpertPolicy<'_> {
    fn action(&self, state: &MazeState, _: &MazeConfig, _: &mut ChaCha8Rng) -> Action {
        let scores = score_actions(self.0, &state.state_key())
            .expect("maze expert accepts every maze state key");
        Action::from_index(scores.argmax).unwrap()
    }
}

/// Serializes a model to pretty JSON (trailing newline included). The maps
/// are ordered, so equal models produce byte-identical files.
pub fn save_model(model: &ExpertModel, path: &Path) -> Result<(), ExpertError> {
    model.validate()?;
    let mut bytes = serde_json::to_vec_pretty(model)
        .map_err(|e| ExpertError::InvalidModel(e.to_string()))?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Loads and validates a model file, distinguishing unreadable, corrupt,
/// version-mismatched, and incomplete documents.
pub fn load_model(path: &Path) -> Result<ExpertModel, ExpertError> {
    let bytes = std::fs::read(path)?;
    let value: serde_json::Value = serde_json::from_slice(&bytes)
        .map_err(|e| ExpertError::CorruptFile(format!("{}: {e}", path.display())))?;
    match value.get("format_version") {
        None => return Err(ExpertError::MissingField("format_version".into())),
        Some(v) => {
            let found = v
                .as_u64()
                .ok_or_else(|| ExpertError::CorruptFile("format_version not an integer".into()))?;
            if found != MODEL_FORMAT_VERSION {
                return Err(ExpertError::VersionMismatch {
                    found,
                    supported: MODEL_FORMAT_VERSION,
                });
            }
        }
    }
    let model: ExpertModel = serde_json::from_value(value).map_err(|e| {
        let msg = e.to_string();
        match msg.strip_prefix("missing field `") {
            Some(rest) => ExpertError::MissingField(rest.trim_end_matches('`').to_string()),
            None => ExpertError::CorruptFile(msg),
        }
    })?;
    model.validate()?;
    Ok(model)
}
