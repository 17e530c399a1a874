//! Gate trained with tabular Q-learning over a discretized weight space.
//!
//! The gate's action is a weight vector over the registry experts, each
//! component drawn from {0, 0.5, 1} (the all-zero vector excluded),
//! normalized and deduplicated. Per-step reward is the mission-shaped maze
//! reward, so the gate learns which expert blend to trust in each state.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fuse, GateDecision, GateError, Objective, ObjectiveTag};
use crate::experts::{
    self, Domain, EpsilonSchedule, ExpertError, ExpertModel, MODEL_FORMAT_VERSION,
};
use crate::maze::{self, Mission};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GateHyperparams {
    pub episodes: u32,
    pub learning_rate: f64,
    pub discount: f64,
    pub epsilon: EpsilonSchedule,
    pub exploring_starts: bool,
    /// Learning-curve checkpoint spacing, in episodes.
    pub checkpoint_every: u32,
}

impl Default for GateHyperparams {
    fn default() -> Self {
        Self {
            episodes: 3000,
            learning_rate: 0.1,
            discount: 0.95,
            epsilon: EpsilonSchedule::default(),
            exploring_starts: true,
            checkpoint_every: 250,
        }
    }
}

/// One point of the training curve: greedy success after N episodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub episodes_trained: u32,
    pub success_rate: f64,
}

/// Trained gate: a Q-table from maze state keys to values of each candidate
/// weight vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedGate {
    pub format_version: u64,
    /// Registry experts the gate was trained over, in weight-vector order.
    pub expert_ids: Vec<String>,
    /// Candidate weight vectors (normalized, deduplicated).
    pub weight_options: Vec<Vec<f64>>,
    /// State key → per-option Q values.
    pub q: BTreeMap<String, Vec<f64>>,
    pub mission: Mission,
    pub hyperparams: GateHyperparams,
    pub seed: u64,
    pub curve: Vec<CurvePoint>,
}

impl TrainedGate {
    /// The trained gate takes its objectives from the mission it was
    /// trained for, not from requirement text.
    pub fn formulate(&self) -> Result<Objective, GateError> {
        Ok(Objective::new(
            mission_tags(self.mission),
            format!("mission tags passed through from config ({})", self.mission),
        ))
    }

    pub fn select(&self, registry: &[ExpertModel]) -> Result<Vec<String>, GateError> {
        if registry.is_empty() {
            return Err(GateError::EmptyRegistry);
        }
        for id in &self.expert_ids {
            if !registry.iter().any(|m| &m.id == id) {
                return Err(GateError::NoExpertAvailable { objective: id.clone() });
            }
        }
        Ok(self.expert_ids.clone())
    }

    /// Looks up the learned weight vector for this state (equal weights on
    /// states never visited during training) and fuses with it.
    pub fn combine(
        &self,
        models: &[&ExpertModel],
        obj: &Objective,
        state_key: &str,
    ) -> Result<GateDecision, GateError> {
        let ids: Vec<&str> = models.iter().map(|m| m.id.as_str()).collect();
        if ids != self.expert_ids.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(GateError::DomainMismatch(format!(
                "trained gate expects experts {:?}, got {ids:?}",
                self.expert_ids
            )));
        }
        let (weights, note) = match self.q.get(state_key) {
            Some(values) => {
                let best = argmax_lowest(values);
                (self.weight_options[best].clone(), format!("learned option {best}"))
            }
            None => (
                vec![1.0 / models.len() as f64; models.len()],
                format!("state '{state_key}' unseen during gate training; equal weights"),
            ),
        };
        fuse(models, &weights, obj, state_key, &note)
    }

    pub fn save(&self, path: &Path) -> Result<(), ExpertError> {
        let mut bytes = serde_json::to_vec_pretty(self)
            .map_err(|e| ExpertError::InvalidModel(e.to_string()))?;
        bytes.push(b'\n');
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ExpertError> {
        let bytes = std::fs::read(path)?;
        let value: serde_json::Value = serde_json::from_slice(&bytes)
            .map_err(|e| ExpertError::CorruptFile(format!("{}: {e}", path.display())))?;
        match value.get("format_version").and_then(|v| v.as_u64()) {
            None => return Err(ExpertError::MissingField("format_version".into())),
            Some(v) if v != MODEL_FORMAT_VERSION => {
                return Err(ExpertError::VersionMismatch {
                    found: v,
                    supported: MODEL_FORMAT_VERSION,
                })
            }
            Some(_) => {}
        }
        let gate: TrainedGate = serde_json::from_value(value).map_err(|e| {
            let msg = e.to_string();
            match msg.strip_prefix("missing field `") {
                Some(rest) => ExpertError::MissingField(rest.trim_end_matches('`').to_string()),
                None => ExpertError::CorruptFile(msg),
            }
        })?;
        Ok(gate)
    }
}

fn mission_tags(mission: Mission) -> Vec<ObjectiveTag> {
    match mission {
        Mission::GoalTrap => vec![ObjectiveTag::GoToGoal, ObjectiveTag::AvoidTrap],
        Mission::GoalPrize => vec![ObjectiveTag::GoToGoal, ObjectiveTag::CollectPrize],
        Mission::GoalPrizeTrap => vec![
            ObjectiveTag::GoToGoal,
            ObjectiveTag::CollectPrize,
            ObjectiveTag::AvoidTrap,
        ],
    }
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

/// Candidate weight vectors: {0, 0.5, 1}ⁿ minus the zero vector, normalized
/// to the simplex and deduplicated, in lexicographic component order.
fn weight_options(n: usize) -> Vec<Vec<f64>> {
    let levels = [0.0, 0.5, 1.0];
    let mut seen: Vec<Vec<f64>> = Vec::new();
    let mut stack = vec![Vec::with_capacity(n)];
    while let Some(partial) = stack.pop() {
        if partial.len() == n {
            let sum: f64 = partial.iter().sum();
            if sum == 0.0 {
                continue;
            }
            let normalized: Vec<f64> = partial.iter().map(|w| w / sum).collect();
            if !seen.iter().any(|v| vectors_equal(v, &normalized)) {
                seen.push(normalized);
            }
            continue;
        }
        // Push in reverse so the pop order enumerates lexicographically.
        for &level in levels.iter().rev() {
            let mut next = partial.clone();
            next.push(level);
            stack.push(next);
        }
    }
    seen
}

fn vectors_equal(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
}

/// Fused maze action for a given weight vector at a given state.
fn fused_action(
    models: &[&ExpertModel],
    weights: &[f64],
    state_key: &str,
) -> Result<maze::Action, GateError> {
    let mut fused = vec![0.0f64; 4];
    for (model, &w) in models.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        let scores = experts::score_actions(model, state_key)?;
        for (f, s) in fused.iter_mut().zip(&scores.scores) {
            *f += w * s;
        }
    }
    Ok(maze::Action::from_index(argmax_lowest(&fused)).unwrap())
}

/// Greedy rollout with the current Q-table; success under the mission.
fn greedy_success(
    q: &BTreeMap<String, Vec<f64>>,
    options: &[Vec<f64>],
    models: &[&ExpertModel],
    cfg: &maze::MazeConfig,
    mission: Mission,
) -> Result<bool, GateError> {
    let mut state = maze::reset(cfg)?;
    let mut traps = 0u32;
    let mut reached = false;
    while !state.terminal {
        let key = state.state_key();
        let weights = match q.get(&key) {
            Some(values) => &options[argmax_lowest(values)],
            None => &options[0],
        };
        let action = fused_action(models, weights, &key)?;
        let out = maze::step_full(cfg, &state, action)?;
        traps += out.entered_trap as u32;
        reached |= out.reached_goal;
        state = out.state;
    }
    Ok(mission.success(reached, state.collected_mask == cfg.full_prize_mask(), traps))
}

/// Trains the gate over a maze-domain registry. Deterministic given `seed`.
pub fn train_gate(
    registry: &[ExpertModel],
    cfg: &maze::MazeConfig,
    mission: Mission,
    hp: &GateHyperparams,
    seed: u64,
) -> Result<TrainedGate, GateError> {
    if registry.is_empty() {
        return Err(GateError::EmptyRegistry);
    }
    for m in registry {
        if m.domain != Domain::Maze {
            return Err(GateError::DomainMismatch(format!(
                "trained gate requires a maze-domain registry; '{}' is {:?}",
                m.id, m.domain
            )));
        }
    }
    cfg.validate()?;
    let models: Vec<&ExpertModel> = registry.iter().collect();
    let options = weight_options(models.len());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut curve = Vec::new();

    let free_cells: Vec<maze::Cell> = (0..cfg.rows)
        .flat_map(|r| (0..cfg.cols).map(move |c| maze::Cell::new(r, c)))
        .filter(|c| *c != cfg.goal && !cfg.walls.contains(c))
        .collect();
    let n_masks = cfg.full_prize_mask() + 1;

    for episode in 0..hp.episodes {
        let eps = hp.epsilon.at(episode, hp.episodes);
        let mut state = if hp.exploring_starts {
            maze::MazeState {
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
            let option = if rng.random::<f64>() < eps {
                rng.random_range(0..options.len())
            } else {
                q.get(&key).map(|v| argmax_lowest(v)).unwrap_or(0)
            };
            let action = fused_action(&models, &options[option], &key)?;
            let out = maze::step_full(cfg, &state, action)?;
            let reward = mission.reward(&out.reward);
            let future = if out.state.terminal {
                0.0
            } else {
                q.get(&out.state.state_key())
                    .map(|v| v.iter().copied().fold(f64::NEG_INFINITY, f64::max))
                    .unwrap_or(0.0)
            };
            let target = reward + hp.discount * future;
            let row = q.entry(key).or_insert_with(|| vec![0.0; options.len()]);
            row[option] += hp.learning_rate * (target - row[option]);
            state = out.state;
        }

        if (episode + 1) % hp.checkpoint_every == 0 || episode + 1 == hp.episodes {
            let success = greedy_success(&q, &options, &models, cfg, mission)?;
            curve.push(CurvePoint {
                episodes_trained: episode + 1,
                success_rate: success as u32 as f64,
            });
        }
    }

    if let Some(last) = curve.last() {
        if last.success_rate < 1.0 {
            log::warn!(
                "trained gate for {mission} still fails the greedy rollout after {} episodes",
                hp.episodes
            );
        }
    }

    Ok(TrainedGate {
        format_version: MODEL_FORMAT_VERSION,
        expert_ids: models.iter().map(|m| m.id.clone()).collect(),
        weight_options: options,
        q,
        mission,
        hyperparams: *hp,
        seed,
        curve,
    })
}
