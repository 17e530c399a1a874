//! Grid-world maze with goal, prize, and trap cells.
//!
//! The environment is a small rectangular grid (3×7 by default). A walker
//! moves one cell per step; moves off the grid or into a wall leave the
//! position unchanged but still cost the step penalty. Prizes pay out once
//! per episode, traps penalize on every entry, and the goal ends the
//! episode. Missions decide which reward components matter and what counts
//! as success.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MazeError {
    #[error("invalid maze config: {0}")]
    InvalidConfig(String),
    #[error("cell {0} is outside the {1}x{2} grid")]
    OutOfBounds(Cell, u8, u8),
    #[error("cannot step a terminal state")]
    TerminalStep,
    #[error("unknown mission '{0}'")]
    UnknownMission(String),
}

/// Grid coordinate (row, column), zero-based from the top-left corner.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct Cell {
    pub row: u8,
    pub col: u8,
}

impl Cell {
    pub const fn new(row: u8, col: u8) -> Self {
        Self { row, col }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.row, self.col)
    }
}

/// The four walker moves. The declaration order is the tie-break order used
/// everywhere an argmax over actions is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn index(self) -> usize {
        match self {
            Action::Up => 0,
            Action::Down => 1,
            Action::Left => 2,
            Action::Right => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    fn delta(self) -> (i16, i16) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Action::Up => "up",
            Action::Down => "down",
            Action::Left => "left",
            Action::Right => "right",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Layout and reward settings of the maze.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MazeConfig {
    pub rows: u8,
    pub cols: u8,
    pub start: Cell,
    pub goal: Cell,
    /// Prize cells; the index of a cell in this list is its bit in the
    /// collected-prize mask, so the order is part of the layout.
    pub prizes: Vec<Cell>,
    pub traps: BTreeSet<Cell>,
    /// Impassable cells; moves into them leave the walker in place.
    pub walls: BTreeSet<Cell>,
    pub reward_step: f64,
    pub reward_goal: f64,
    pub reward_prize: f64,
    pub reward_trap: f64,
    pub max_steps: u32,
    /// Whether entering a trap ends the episode (default: penalty only).
    pub trap_terminates: bool,
}

impl Default for MazeConfig {
    /// The evaluation layout: one prize below the direct corridor, one trap
    /// on it, one trap above it.
    ///
    /// ```text
    /// . . . . T . .
    /// W . . T . . G
    /// . . P . . . .
    /// ```
    fn default() -> Self {
        Self {
            rows: 3,
            cols: 7,
            start: Cell::new(1, 0),
            goal: Cell::new(1, 6),
            prizes: vec![Cell::new(2, 2)],
            traps: BTreeSet::from([Cell::new(1, 3), Cell::new(0, 4)]),
            walls: BTreeSet::new(),
            reward_step: -0.05,
            reward_goal: 1.0,
            reward_prize: 0.5,
            reward_trap: -1.0,
            max_steps: 100,
            trap_terminates: false,
        }
    }
}

impl MazeConfig {
    pub fn validate(&self) -> Result<(), MazeError> {
        if self.rows == 0 || self.cols == 0 {
            return Err(MazeError::InvalidConfig("grid must be non-degenerate".into()));
        }
        if self.max_steps == 0 {
            return Err(MazeError::InvalidConfig("max_steps must be >= 1".into()));
        }
        if self.prizes.len() > 16 {
            return Err(MazeError::InvalidConfig(
                "at most 16 prize cells are supported".into(),
            ));
        }
        for cell in self.special_cells() {
            self.check_bounds(cell)?;
        }
        let mut seen = BTreeSet::new();
        for cell in self.special_cells() {
            if !seen.insert(cell) {
                return Err(MazeError::InvalidConfig(format!(
                    "start/goal/prize/trap cells must be mutually distinct; {cell} repeats"
                )));
            }
        }
        for &w in &self.walls {
            self.check_bounds(w)?;
            if seen.contains(&w) {
                return Err(MazeError::InvalidConfig(format!(
                    "wall {w} overlaps a special cell"
                )));
            }
        }
        Ok(())
    }

    fn special_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        [self.start, self.goal]
            .into_iter()
            .chain(self.prizes.iter().copied())
            .chain(self.traps.iter().copied())
    }

    pub fn in_bounds(&self, cell: Cell) -> bool {
        cell.row < self.rows && cell.col < self.cols
    }

    fn check_bounds(&self, cell: Cell) -> Result<(), MazeError> {
        if self.in_bounds(cell) {
            Ok(())
        } else {
            Err(MazeError::OutOfBounds(cell, self.rows, self.cols))
        }
    }

    fn prize_index(&self, cell: Cell) -> Option<usize> {
        self.prizes.iter().position(|&p| p == cell)
    }

    pub fn full_prize_mask(&self) -> u32 {
        (1u32 << self.prizes.len()) - 1
    }

    /// Destination of `action` from `from`: unchanged if the move leaves the
    /// grid or hits a wall.
    pub fn destination(&self, from: Cell, action: Action) -> Cell {
        let (dr, dc) = action.delta();
        let row = from.row as i16 + dr;
        let col = from.col as i16 + dc;
        if row < 0 || col < 0 || row >= self.rows as i16 || col >= self.cols as i16 {
            return from;
        }
        let to = Cell::new(row as u8, col as u8);
        if self.walls.contains(&to) {
            from
        } else {
            to
        }
    }
}

/// Walker position plus episode bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MazeState {
    pub walker: Cell,
    /// Bit i set ⇔ prize i collected this episode.
    pub collected_mask: u32,
    pub steps_taken: u32,
    pub terminal: bool,
}

impl MazeState {
    /// Q-table key: `"r,c|prizemask"`.
    pub fn state_key(&self) -> String {
        format!("{},{}|{}", self.walker.row, self.walker.col, self.collected_mask)
    }

    pub fn collected_prizes(&self, cfg: &MazeConfig) -> Vec<Cell> {
        cfg.prizes
            .iter()
            .enumerate()
            .filter(|(i, _)| self.collected_mask >> i & 1 == 1)
            .map(|(_, &c)| c)
            .collect()
    }
}

/// Per-step reward split into its components so that objective shaping and
/// mission shaping can pick what they care about.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepReward {
    pub step: f64,
    pub prize: f64,
    pub trap: f64,
    pub goal: f64,
}

impl StepReward {
    pub fn total(&self) -> f64 {
        self.step + self.prize + self.trap + self.goal
    }
}

/// Everything that happened in one transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: MazeState,
    pub reward: StepReward,
    pub entered_trap: bool,
    pub collected_prize: bool,
    pub reached_goal: bool,
}

/// Mission flavors from the evaluation: what the walker must accomplish for
/// an episode to count as a success.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mission {
    /// Reach the goal without entering any trap.
    GoalTrap,
    /// Collect every prize, then reach the goal.
    GoalPrize,
    /// Collect every prize and reach the goal without entering any trap.
    GoalPrizeTrap,
}

impl Mission {
    pub const ALL: [Mission; 3] = [Mission::GoalTrap, Mission::GoalPrize, Mission::GoalPrizeTrap];

    pub fn includes_prize(self) -> bool {
        matches!(self, Mission::GoalPrize | Mission::GoalPrizeTrap)
    }

    pub fn includes_trap(self) -> bool {
        matches!(self, Mission::GoalTrap | Mission::GoalPrizeTrap)
    }

    /// Mission-shaped reward: step and goal always count, prize/trap only
    /// when the mission cares about them.
    pub fn reward(self, r: &StepReward) -> f64 {
        let mut total = r.step + r.goal;
        if self.includes_prize() {
            total += r.prize;
        }
        if self.includes_trap() {
            total += r.trap;
        }
        total
    }

    pub fn success(self, reached_goal: bool, all_prizes: bool, traps_entered: u32) -> bool {
        reached_goal
            && (!self.includes_prize() || all_prizes)
            && (!self.includes_trap() || traps_entered == 0)
    }

    pub fn label(self) -> &'static str {
        match self {
            Mission::GoalTrap => "Goal+Trap",
            Mission::GoalPrize => "Goal+Prize",
            Mission::GoalPrizeTrap => "Goal+Prize+Trap",
        }
    }
}

impl fmt::Display for Mission {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Mission {
    type Err = MazeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Goal+Trap" | "goal-trap" => Ok(Mission::GoalTrap),
            "Goal+Prize" | "goal-prize" => Ok(Mission::GoalPrize),
            "Goal+Prize+Trap" | "goal-prize-trap" => Ok(Mission::GoalPrizeTrap),
            other => Err(MazeError::UnknownMission(other.to_string())),
        }
    }
}

/// Fresh episode state: walker at start, nothing collected.
pub fn reset(cfg: &MazeConfig) -> Result<MazeState, MazeError> {
    cfg.validate()?;
    Ok(MazeState {
        walker: cfg.start,
        collected_mask: 0,
        steps_taken: 0,
        terminal: false,
    })
}

/// One transition with the full reward breakdown. Prize/trap/goal effects
/// trigger on cell entry only, so a blocked move costs just the step
/// penalty.
pub fn step_full(
    cfg: &MazeConfig,
    state: &MazeState,
    action: Action,
) -> Result<StepOutcome, MazeError> {
    if state.terminal {
        return Err(MazeError::TerminalStep);
    }
    let next_cell = cfg.destination(state.walker, action);
    let entered = next_cell != state.walker;

    let mut reward = StepReward { step: cfg.reward_step, ..Default::default() };
    let mut mask = state.collected_mask;
    let mut entered_trap = false;
    let mut collected_prize = false;
    let mut reached_goal = false;

    if entered {
        if let Some(i) = cfg.prize_index(next_cell) {
            if mask >> i & 1 == 0 {
                mask |= 1 << i;
                reward.prize = cfg.reward_prize;
                collected_prize = true;
            }
        }
        if cfg.traps.contains(&next_cell) {
            reward.trap = cfg.reward_trap;
            entered_trap = true;
        }
        if next_cell == cfg.goal {
            reward.goal = cfg.reward_goal;
            reached_goal = true;
        }
    }

    let steps_taken = state.steps_taken + 1;
    let terminal = reached_goal
        || (entered_trap && cfg.trap_terminates)
        || steps_taken >= cfg.max_steps;

    Ok(StepOutcome {
        state: MazeState { walker: next_cell, collected_mask: mask, steps_taken, terminal },
        reward,
        entered_trap,
        collected_prize,
        reached_goal,
    })
}

/// Spec-surface transition: mission-shaped scalar reward.
pub fn step(
    cfg: &MazeConfig,
    state: &MazeState,
    action: Action,
    mission: Mission,
) -> Result<(MazeState, f64), MazeError> {
    let out = step_full(cfg, state, action)?;
    Ok((out.state, mission.reward(&out.reward)))
}

/// BFS distance from `from` to `to` over the open grid: walls block, traps
/// are passable. `None` when unreachable.
pub fn shortest_path_length(
    cfg: &MazeConfig,
    from: Cell,
    to: Cell,
) -> Result<Option<u32>, MazeError> {
    cfg.check_bounds(from)?;
    cfg.check_bounds(to)?;
    if from == to {
        return Ok(Some(0));
    }
    let idx = |c: Cell| c.row as usize * cfg.cols as usize + c.col as usize;
    let mut dist = vec![u32::MAX; cfg.rows as usize * cfg.cols as usize];
    dist[idx(from)] = 0;
    let mut queue = VecDeque::from([from]);
    while let Some(cur) = queue.pop_front() {
        for action in Action::ALL {
            let nxt = cfg.destination(cur, action);
            if nxt == cur || dist[idx(nxt)] != u32::MAX {
                continue;
            }
            dist[idx(nxt)] = dist[idx(cur)] + 1;
            if nxt == to {
                return Ok(Some(dist[idx(nxt)]));
            }
            queue.push_back(nxt);
        }
    }
    Ok(None)
}

/// A decision rule over maze states. The RNG comes from the episode seed so
/// stochastic policies stay reproducible.
pub trait MazePolicy {
    fn action(&self, state: &MazeState, cfg: &MazeConfig, rng: &mut ChaCha8Rng) -> Action;
}

/// Picks uniformly among the four actions.
pub struct UniformRandomPolicy;

impl MazePolicy for UniformRandomPolicy {
    fn action(&self, _: &MazeState, _: &MazeConfig, rng: &mut ChaCha8Rng) -> Action {
        Action::from_index(rng.random_range(0..4)).unwrap()
    }
}

/// Always plays the same action; useful as a degenerate baseline.
pub struct ConstantPolicy(pub Action);

impl MazePolicy for ConstantPolicy {
    fn action(&self, _: &MazeState, _: &MazeConfig, _: &mut ChaCha8Rng) -> Action {
        self.0
    }
}

impl<F> MazePolicy for F
where
    F: Fn(&MazeState, &MazeConfig, &mut ChaCha8Rng) -> Action,
{
    fn action(&self, state: &MazeState, cfg: &MazeConfig, rng: &mut ChaCha8Rng) -> Action {
        self(state, cfg, rng)
    }
}

/// One recorded transition of an episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub action: Action,
    pub cell_after: Cell,
    pub reward: f64,
}

/// Full outcome of one episode under a mission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub mission: Mission,
    pub start: Cell,
    pub trajectory: Vec<TrajectoryStep>,
    pub total_reward: f64,
    pub steps: u32,
    pub success: bool,
    pub reached_goal: bool,
    pub traps_entered: u32,
    pub prizes_collected: u32,
}

/// Runs one episode to termination. Deterministic given (policy, seed).
pub fn run_episode<P: MazePolicy>(
    cfg: &MazeConfig,
    mission: Mission,
    policy: &P,
    seed: u64,
) -> Result<EpisodeRecord, MazeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = reset(cfg)?;
    let mut trajectory = Vec::new();
    let mut total_reward = 0.0;
    let mut traps_entered = 0u32;
    let mut prizes_collected = 0u32;
    let mut reached_goal = false;

    while !state.terminal {
        let action = policy.action(&state, cfg, &mut rng);
        let out = step_full(cfg, &state, action)?;
        let reward = mission.reward(&out.reward);
        total_reward += reward;
        traps_entered += out.entered_trap as u32;
        prizes_collected += out.collected_prize as u32;
        reached_goal |= out.reached_goal;
        trajectory.push(TrajectoryStep { action, cell_after: out.state.walker, reward });
        state = out.state;
    }

    let all_prizes = state.collected_mask == cfg.full_prize_mask();
    Ok(EpisodeRecord {
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

/// ASCII rendering for logs: goal `G`, prize `P` (collected `p`), trap `T`,
/// wall `#`, walker `W`, empty `.`.
pub fn render_ascii(cfg: &MazeConfig, state: Option<&MazeState>) -> String {
    let mut out = String::new();
    for r in 0..cfg.rows {
        for c in 0..cfg.cols {
            let cell = Cell::new(r, c);
            let ch = if state.is_some_and(|s| s.walker == cell) {
                'W'
            } else if cell == cfg.goal {
                'G'
            } else if let Some(i) = cfg.prize_index(cell) {
                let collected = state.is_some_and(|s| s.collected_mask >> i & 1 == 1);
                if collected {
                    'p'
                } else {
                    'P'
                }
            } else if cfg.traps.contains(&cell) {
                'T'
            } else if cfg.walls.contains(&cell) {
                '#'
            } else {
                '.'
            };
            out.push(ch);
            if c + 1 < cfg.cols {
                out.push(' ');
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_layout_is_valid() {
        let cfg = MazeConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.rows, 3);
        assert_eq!(cfg.cols, 7);
        assert_eq!(cfg.prizes.len(), 1);
        assert_eq!(cfg.traps.len(), 2);
    }

    #[test]
    fn reset_places_walker_at_start() {
        let cfg = MazeConfig::default();
        let s = reset(&cfg).unwrap();
        assert_eq!(s.walker, cfg.start);
        assert_eq!(s.collected_mask, 0);
        assert_eq!(s.steps_taken, 0);
        assert!(!s.terminal);
        assert_eq!(s, reset(&cfg).unwrap());
        assert_eq!(s.state_key(), "1,0|0");
    }

    #[test]
    fn config_rejects_trap_on_start() {
        let mut cfg = MazeConfig::default();
        cfg.traps.insert(cfg.start);
        assert!(matches!(reset(&cfg), Err(MazeError::InvalidConfig(_))));
    }

    #[test]
    fn config_rejects_out_of_bounds_and_overlaps() {
        let mut cfg = MazeConfig::default();
        cfg.goal = Cell::new(5, 9);
        assert!(matches!(cfg.validate(), Err(MazeError::OutOfBounds(..))));

        let mut cfg = MazeConfig::default();
        cfg.prizes.push(cfg.goal);
        assert!(cfg.validate().is_err());

        let mut cfg = MazeConfig::default();
        cfg.walls.insert(cfg.start);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn step_into_goal_terminates_with_goal_reward() {
        let cfg = MazeConfig::default();
        let state = MazeState {
            walker: Cell::new(1, 5),
            collected_mask: 0,
            steps_taken: 3,
            terminal: false,
        };
        let (next, reward) = step(&cfg, &state, Action::Right, Mission::GoalTrap).unwrap();
        assert!(next.terminal);
        assert_eq!(next.walker, cfg.goal);
        assert!((reward - (cfg.reward_step + cfg.reward_goal)).abs() < 1e-15);
    }

    #[test]
    fn blocked_moves_keep_position_and_cost_a_step() {
        let cfg = MazeConfig::default();
        let state = reset(&cfg).unwrap(); // (1,0)
        let (next, reward) = step(&cfg, &state, Action::Left, Mission::GoalTrap).unwrap();
        assert_eq!(next.walker, state.walker);
        assert_eq!(next.steps_taken, 1);
        assert!((reward - cfg.reward_step).abs() < 1e-15);

        let mut walled = MazeConfig::default();
        walled.walls.insert(Cell::new(1, 1));
        let (next, _) = step(&walled, &state, Action::Right, Mission::GoalTrap).unwrap();
        assert_eq!(next.walker, state.walker, "wall must block the move");
    }

    #[test]
    fn prizes_pay_once() {
        let cfg = MazeConfig::default();
        let at = MazeState {
            walker: Cell::new(2, 1),
            collected_mask: 0,
            steps_taken: 0,
            terminal: false,
        };
        let out = step_full(&cfg, &at, Action::Right).unwrap(); // into (2,2)
        assert!(out.collected_prize);
        assert_eq!(out.reward.prize, cfg.reward_prize);
        assert_eq!(out.state.collected_mask, 1);

        // Walk off and back on: no second payout.
        let off = step_full(&cfg, &out.state, Action::Left).unwrap();
        let back = step_full(&cfg, &off.state, Action::Right).unwrap();
        assert!(!back.collected_prize);
        assert_eq!(back.reward.prize, 0.0);
        assert!((back.reward.total() - cfg.reward_step).abs() < 1e-15);
    }

    #[test]
    fn trap_penalty_and_termination_flag() {
        let cfg = MazeConfig::default();
        let at = MazeState {
            walker: Cell::new(1, 2),
            collected_mask: 0,
            steps_taken: 0,
            terminal: false,
        };
        let out = step_full(&cfg, &at, Action::Right).unwrap(); // into trap (1,3)
        assert!(out.entered_trap);
        assert_eq!(out.reward.trap, cfg.reward_trap);
        assert!(!out.state.terminal, "traps are non-terminal by default");

        let mut lethal = cfg.clone();
        lethal.trap_terminates = true;
        let out = step_full(&lethal, &at, Action::Right).unwrap();
        assert!(out.state.terminal);
    }

    #[test]
    fn mission_reward_shaping_selects_components() {
        let r = StepReward { step: -0.05, prize: 0.5, trap: -1.0, goal: 1.0 };
        assert!((Mission::GoalTrap.reward(&r) - (-0.05 + 1.0 - 1.0)).abs() < 1e-15);
        assert!((Mission::GoalPrize.reward(&r) - (-0.05 + 1.0 + 0.5)).abs() < 1e-15);
        assert!((Mission::GoalPrizeTrap.reward(&r) - r.total()).abs() < 1e-15);
    }

    #[test]
    fn stepping_terminal_state_is_an_error() {
        let cfg = MazeConfig::default();
        let mut s = reset(&cfg).unwrap();
        s.terminal = true;
        assert!(matches!(step_full(&cfg, &s, Action::Up), Err(MazeError::TerminalStep)));
    }

    #[test]
    fn max_steps_terminates() {
        let mut cfg = MazeConfig::default();
        cfg.max_steps = 2;
        let s = reset(&cfg).unwrap();
        let s = step_full(&cfg, &s, Action::Up).unwrap().state;
        assert!(!s.terminal);
        let s = step_full(&cfg, &s, Action::Down).unwrap().state;
        assert!(s.terminal);
        assert_eq!(s.steps_taken, 2);
    }

    #[test]
    fn bfs_matches_manhattan_on_open_grid() {
        let mut cfg = MazeConfig::default();
        cfg.walls.clear();
        assert_eq!(
            shortest_path_length(&cfg, Cell::new(0, 0), Cell::new(2, 6)).unwrap(),
            Some(8)
        );
        assert_eq!(
            shortest_path_length(&cfg, Cell::new(1, 3), Cell::new(1, 3)).unwrap(),
            Some(0)
        );
        for r1 in 0..3u8 {
            for c1 in 0..7u8 {
                for r2 in 0..3u8 {
                    for c2 in 0..7u8 {
                        let a = Cell::new(r1, c1);
                        let b = Cell::new(r2, c2);
                        let manhattan = (r1.abs_diff(r2) + c1.abs_diff(c2)) as u32;
                        assert_eq!(
                            shortest_path_length(&cfg, a, b).unwrap(),
                            Some(manhattan),
                            "{a} -> {b}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn bfs_respects_walls_and_detects_unreachable() {
        let mut cfg = MazeConfig::default();
        // Wall off column 5 entirely: goal column becomes unreachable.
        cfg.walls = BTreeSet::from([Cell::new(0, 5), Cell::new(1, 5), Cell::new(2, 5)]);
        // (1,5) is a wall now; it may not overlap specials, so move the goal.
        cfg.goal = Cell::new(1, 4);
        cfg.validate().unwrap();
        assert_eq!(
            shortest_path_length(&cfg, Cell::new(1, 0), Cell::new(1, 6)).unwrap(),
            None
        );
        assert!(shortest_path_length(&cfg, Cell::new(9, 0), Cell::new(1, 1)).is_err());
    }

    #[test]
    fn always_left_policy_fails_at_max_steps() {
        let cfg = MazeConfig::default();
        let rec = run_episode(&cfg, Mission::GoalTrap, &ConstantPolicy(Action::Left), 3).unwrap();
        assert!(!rec.success);
        assert!(!rec.reached_goal);
        assert_eq!(rec.steps, cfg.max_steps);
        assert!(rec.trajectory.iter().all(|t| t.cell_after.col == 0));
    }

    #[test]
    fn random_policy_success_rate_strictly_between_zero_and_one() {
        let cfg = MazeConfig::default();
        let successes = (0..1000)
            .filter(|&seed| {
                run_episode(&cfg, Mission::GoalTrap, &UniformRandomPolicy, seed)
                    .unwrap()
                    .success
            })
            .count();
        assert!(successes > 0, "random walker never succeeded in 1000 episodes");
        assert!(successes < 1000, "random walker never failed in 1000 episodes");
    }

    #[test]
    fn episodes_are_reproducible() {
        let cfg = MazeConfig::default();
        let a = run_episode(&cfg, Mission::GoalPrizeTrap, &UniformRandomPolicy, 99).unwrap();
        let b = run_episode(&cfg, Mission::GoalPrizeTrap, &UniformRandomPolicy, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ascii_render_shows_layout() {
        let cfg = MazeConfig::default();
        let s = reset(&cfg).unwrap();
        let art = render_ascii(&cfg, Some(&s));
        let rows: Vec<&str> = art.lines().collect();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0], ". . . . T . .");
        assert_eq!(rows[1], "W . . T . . G");
        assert_eq!(rows[2], ". . P . . . .");
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(128))]

            #[test]
            fn walker_stays_in_bounds(actions in proptest::collection::vec(0usize..4, 1..200)) {
                let cfg = MazeConfig::default();
                let mut state = reset(&cfg).unwrap();
                let mut prize_total = 0.0;
                for a in actions {
                    if state.terminal {
                        break;
                    }
                    let out = step_full(&cfg, &state, Action::from_index(a).unwrap()).unwrap();
                    prize_total += out.reward.prize;
                    state = out.state;
                    prop_assert!(cfg.in_bounds(state.walker));
                    prop_assert!(state.steps_taken <= cfg.max_steps);
                }
                prop_assert!(prize_total <= cfg.prizes.len() as f64 * cfg.reward_prize + 1e-12);
            }
        }
    }
}
