//! Tasks and the built-in benchmark environments.
//!
//! The standard curriculum is a gridworld where the agent starts in the
//! centre and each task asks it to reach a different corner. The agent sees
//! a one-hot encoding of its cell; the task is identified only through the
//! constant goal input.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::Trial;

static ENV_STEPS: AtomicU64 = AtomicU64::new(0);

/// Total number of `env_step` calls made by this process.
pub fn env_step_count() -> u64 {
    ENV_STEPS.load(Ordering::SeqCst)
}

/// Grid direction decoded from the first four action units.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    North,
    East,
    South,
    West,
}

impl Direction {
    const ALL: [Direction; 4] = [Direction::North, Direction::East, Direction::South, Direction::West];

    /// Argmax over `action[..4]`, lowest index wins ties.
    pub fn decode(action: &[f64]) -> Result<Self> {
        if action.len() < 4 {
            return Err(Error::dim("action vector", 4, action.len()));
        }
        let mut best = 0;
        for i in 1..4 {
            if action[i] > action[best] {
                best = i;
            }
        }
        Ok(Self::ALL[best])
    }

    fn delta(self) -> (i64, i64) {
        match self {
            Direction::North => (0, -1),
            Direction::East => (1, 0),
            Direction::South => (0, 1),
            Direction::West => (-1, 0),
        }
    }
}

/// `(x, y)` with `y = 0` the northern row.
pub type Cell = (usize, usize);

fn default_step_reward() -> f64 {
    -0.01
}

fn default_goal_reward() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridMazeSpec {
    pub width: usize,
    pub height: usize,
    pub start: Cell,
    pub goal_cell: Cell,
    #[serde(default = "default_step_reward")]
    pub step_reward: f64,
    #[serde(default = "default_goal_reward")]
    pub goal_reward: f64,
    /// Defaults to `4 * width * height`.
    #[serde(default)]
    pub episode_cap: Option<usize>,
    /// Probability that the chosen move is replaced by a uniformly random one.
    #[serde(default)]
    pub slip_prob: f64,
    /// When set, a second reward component carries this penalty on every
    /// move blocked by a wall.
    #[serde(default)]
    pub bump_penalty: Option<f64>,
}

impl GridMazeSpec {
    pub fn new(width: usize, height: usize, start: Cell, goal_cell: Cell) -> Self {
        Self {
            width,
            height,
            start,
            goal_cell,
            step_reward: default_step_reward(),
            goal_reward: default_goal_reward(),
            episode_cap: None,
            slip_prob: 0.0,
            bump_penalty: None,
        }
    }

    pub fn cap(&self) -> usize {
        self.episode_cap.unwrap_or(4 * self.width * self.height)
    }

    pub fn cells(&self) -> usize {
        self.width * self.height
    }

    pub fn index(&self, c: Cell) -> usize {
        c.1 * self.width + c.0
    }

    pub fn validate(&self) -> Result<()> {
        let inside = |c: Cell| c.0 < self.width && c.1 < self.height;
        if self.width == 0 || self.height == 0 {
            return Err(Error::Environment("maze must have at least one cell".into()));
        }
        if !inside(self.start) || !inside(self.goal_cell) {
            return Err(Error::Environment("start and goal must lie inside the grid".into()));
        }
        if self.start == self.goal_cell {
            return Err(Error::Environment("start must differ from goal".into()));
        }
        if !(0.0..=1.0).contains(&self.slip_prob) {
            return Err(Error::Environment("slip_prob must be in [0, 1]".into()));
        }
        if self.manhattan() > self.cap() {
            return Err(Error::Environment("goal unreachable within episode cap".into()));
        }
        Ok(())
    }

    pub fn manhattan(&self) -> usize {
        self.start.0.abs_diff(self.goal_cell.0) + self.start.1.abs_diff(self.goal_cell.1)
    }
}

/// A scripted environment whose outcome ignores the agent's actions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MockSpec {
    /// Width of the one-hot observation.
    pub cells: usize,
    pub episode_len: usize,
    pub succeed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvSpec {
    GridMaze(GridMazeSpec),
    Mock(MockSpec),
}

impl EnvSpec {
    pub fn obs_dim(&self) -> usize {
        match self {
            EnvSpec::GridMaze(g) => g.cells(),
            EnvSpec::Mock(m) => m.cells,
        }
    }

    pub fn reward_dim(&self) -> usize {
        match self {
            EnvSpec::GridMaze(g) if g.bump_penalty.is_some() => 2,
            _ => 1,
        }
    }

    /// Minimum number of action units the decoder reads.
    pub fn action_dim(&self) -> usize {
        match self {
            EnvSpec::GridMaze(_) => 4,
            EnvSpec::Mock(_) => 0,
        }
    }

    pub fn episode_cap(&self) -> usize {
        match self {
            EnvSpec::GridMaze(g) => g.cap(),
            EnvSpec::Mock(m) => m.episode_len,
        }
    }

    pub fn is_deterministic(&self) -> bool {
        match self {
            EnvSpec::GridMaze(g) => g.slip_prob == 0.0,
            EnvSpec::Mock(_) => true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EnvSpec::GridMaze(g) => g.validate(),
            EnvSpec::Mock(m) if m.cells == 0 || m.episode_len == 0 => {
                Err(Error::Environment("mock needs cells >= 1 and episode_len >= 1".into()))
            }
            EnvSpec::Mock(_) => Ok(()),
        }
    }
}

fn default_rho() -> f64 {
    1.0
}

fn default_k() -> usize {
    1
}

/// When a task counts as solved: at least `min_success_trials` recent
/// trials, of which a fraction of at least `success_rate_threshold` reached
/// the goal within `max_steps_per_trial`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuccessCriterion {
    #[serde(default = "default_k")]
    pub min_success_trials: usize,
    #[serde(default = "default_rho")]
    pub success_rate_threshold: f64,
    #[serde(default)]
    pub max_steps_per_trial: Option<usize>,
}

impl Default for SuccessCriterion {
    fn default() -> Self {
        Self {
            min_success_trials: default_k(),
            success_rate_threshold: default_rho(),
            max_steps_per_trial: None,
        }
    }
}

impl SuccessCriterion {
    pub fn new(k: usize, rho: f64) -> Self {
        Self {
            min_success_trials: k,
            success_rate_threshold: rho,
            max_steps_per_trial: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_success_trials == 0 {
            return Err(Error::InvalidArgument("min_success_trials must be >= 1".into()));
        }
        if !(self.success_rate_threshold > 0.0 && self.success_rate_threshold <= 1.0) {
            return Err(Error::InvalidArgument("success_rate_threshold must be in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskDescription {
    pub task_id: String,
    pub goal_index: usize,
    pub env: EnvSpec,
    #[serde(default)]
    pub criterion: SuccessCriterion,
}

impl TaskDescription {
    pub fn validate(&self, p: usize) -> Result<()> {
        if self.goal_index >= p {
            return Err(Error::InvalidArgument(format!(
                "goal_index {} out of range for p = {p}",
                self.goal_index
            )));
        }
        self.env.validate()?;
        self.criterion.validate()
    }

    /// Episode length limit used when judging success.
    pub fn success_step_limit(&self) -> usize {
        self.criterion
            .max_steps_per_trial
            .unwrap_or_else(|| self.env.episode_cap())
    }
}

/// One-hot goal input for `task`, constant over all of its trials.
pub fn goal_encoding(task: &TaskDescription, p: usize) -> Result<Vec<f64>> {
    if task.goal_index >= p {
        return Err(Error::InvalidArgument(format!(
            "goal_index {} out of range for p = {p}",
            task.goal_index
        )));
    }
    let mut g = vec![0.0; p];
    g[task.goal_index] = 1.0;
    Ok(g)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub input: Vec<f64>,
    pub reward: Vec<f64>,
    pub done: bool,
}

#[derive(Clone, Debug)]
pub struct EnvState {
    pub position: Cell,
    pub steps: usize,
    pub done: bool,
    pub reached_goal: bool,
    rng: ChaCha8Rng,
}

impl EnvState {
    fn fresh(position: Cell, seed: u64) -> Self {
        Self {
            position,
            steps: 0,
            done: false,
            reached_goal: false,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

fn one_hot(len: usize, idx: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[idx] = 1.0;
    v
}

pub fn env_reset(spec: &EnvSpec, seed: u64) -> Result<(EnvState, Observation)> {
    spec.validate()?;
    let (state, input) = match spec {
        EnvSpec::GridMaze(g) => (EnvState::fresh(g.start, seed), one_hot(g.cells(), g.index(g.start))),
        EnvSpec::Mock(m) => (EnvState::fresh((0, 0), seed), one_hot(m.cells, 0)),
    };
    let obs = Observation {
        input,
        reward: vec![0.0; spec.reward_dim()],
        done: false,
    };
    Ok((state, obs))
}

pub fn env_step(spec: &EnvSpec, state: &EnvState, action: &[f64]) -> Result<(EnvState, Observation)> {
    if state.done {
        return Err(Error::Environment("episode already finished".into()));
    }
    ENV_STEPS.fetch_add(1, Ordering::Relaxed);
    let mut next = state.clone();
    next.steps += 1;
    match spec {
        EnvSpec::GridMaze(g) => {
            let mut dir = Direction::decode(action)?;
            if g.slip_prob > 0.0 && next.rng.random::<f64>() < g.slip_prob {
                dir = Direction::ALL[next.rng.random_range(0..4)];
            }
            let (dx, dy) = dir.delta();
            let nx = next.position.0 as i64 + dx;
            let ny = next.position.1 as i64 + dy;
            let blocked = nx < 0 || ny < 0 || nx >= g.width as i64 || ny >= g.height as i64;
            if !blocked {
                next.position = (nx as usize, ny as usize);
            }
            let mut reward = vec![g.step_reward];
            if next.position == g.goal_cell {
                reward[0] = g.goal_reward;
                next.reached_goal = true;
                next.done = true;
            }
            if let Some(p) = g.bump_penalty {
                reward.push(if blocked { p } else { 0.0 });
            }
            if next.steps >= g.cap() {
                next.done = true;
            }
            let obs = Observation {
                input: one_hot(g.cells(), g.index(next.position)),
                reward,
                done: next.done,
            };
            Ok((next, obs))
        }
        EnvSpec::Mock(m) => {
            let finished = next.steps >= m.episode_len;
            next.done = finished;
            next.reached_goal = finished && m.succeed;
            let r = if next.reached_goal { 1.0 } else { 0.0 };
            let obs = Observation {
                input: one_hot(m.cells, next.steps % m.cells),
                reward: vec![r],
                done: finished,
            };
            Ok((next, obs))
        }
    }
}

/// Judges the `K` most recent trials against the criterion.
pub fn check_success<'a, I>(trials: I, criterion: &SuccessCriterion) -> bool
where
    I: IntoIterator<Item = &'a Trial>,
{
    let outcomes: Vec<bool> = trials.into_iter().map(|t| t.success).collect();
    success_of(&outcomes, criterion)
}

pub(crate) fn success_of(outcomes: &[bool], criterion: &SuccessCriterion) -> bool {
    let k = criterion.min_success_trials.max(1);
    if outcomes.len() < k {
        return false;
    }
    let recent = &outcomes[outcomes.len() - k..];
    let hits = recent.iter().filter(|&&s| s).count();
    hits as f64 / k as f64 >= criterion.success_rate_threshold
}

/// Names and goal cells of the four corner tasks, in goal-index order.
pub fn corner_cells(width: usize, height: usize) -> [(&'static str, Cell); 4] {
    [
        ("north_east", (width - 1, 0)),
        ("north_west", (0, 0)),
        ("south_east", (width - 1, height - 1)),
        ("south_west", (0, height - 1)),
    ]
}

/// The standard four-corner curriculum: start in the centre, one task per
/// corner, goal indices 0..4.
pub fn corner_curriculum(width: usize, height: usize, slip_prob: f64, criterion: SuccessCriterion) -> Vec<TaskDescription> {
    let start = (width / 2, height / 2);
    corner_cells(width, height)
        .into_iter()
        .enumerate()
        .map(|(i, (name, goal))| {
            let mut spec = GridMazeSpec::new(width, height, start, goal);
            spec.slip_prob = slip_prob;
            TaskDescription {
                task_id: name.to_string(),
                goal_index: i,
                env: EnvSpec::GridMaze(spec),
                criterion: criterion.clone(),
            }
        })
        .collect()
}
