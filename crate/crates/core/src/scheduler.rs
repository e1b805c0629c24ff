//! Automatic task ordering with budget doubling.
//!
//! Tasks are attempted round-robin with a per-attempt budget `c`. Every
//! solved task is consolidated right away with budget `λc` and leaves the
//! unsolved set. A pass that solves nothing doubles `c`; a pass that solves
//! at least one task resets `c` to its original value for the next pass.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What an attempt reports back to the scheduler.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttemptResult {
    pub solved: bool,
    /// Budget actually consumed, in the same unit as `c`.
    pub spent: f64,
}

/// The learning system driven by the scheduler.
pub trait CurriculumLearner {
    fn attempt(&mut self, task: usize, budget: f64, pass: usize) -> Result<AttemptResult>;

    fn consolidate(&mut self, task: usize, budget: f64, pass: usize) -> Result<()>;

    fn budget_doubled(&mut self, _pass: usize, _old: f64, _new: f64) {}
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolvedTask {
    pub task: usize,
    pub pass: usize,
    pub budget: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurriculumState {
    pub unsolved: Vec<usize>,
    pub solved: Vec<SolvedTask>,
    pub c: f64,
    pub c0: f64,
    pub lambda: f64,
    pub pass_count: usize,
}

impl CurriculumState {
    pub fn new(tasks: usize, c0: f64, lambda: f64) -> Result<Self> {
        if tasks == 0 {
            return Err(Error::InvalidArgument("curriculum needs at least one task".into()));
        }
        if !(c0.is_finite() && c0 > 0.0) || !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidArgument("c0 and lambda must be > 0".into()));
        }
        Ok(Self {
            unsolved: (0..tasks).collect(),
            solved: Vec::new(),
            c: c0,
            c0,
            lambda,
            pass_count: 0,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurriculumReport {
    pub solved: Vec<SolvedTask>,
    pub unsolved: Vec<usize>,
    /// `c` at the start of each pass.
    pub pass_budgets: Vec<f64>,
    pub consolidations: usize,
    pub total_spent: f64,
    /// True when the run stopped on `max_total_budget` with tasks left.
    pub exhausted: bool,
}

/// Runs passes until every task is solved or `max_total_budget` is spent.
pub fn run_curriculum<L: CurriculumLearner>(
    learner: &mut L,
    tasks: usize,
    c0: f64,
    lambda: f64,
    max_total_budget: f64,
) -> Result<CurriculumReport> {
    let mut state = CurriculumState::new(tasks, c0, lambda)?;
    if max_total_budget.is_nan() || max_total_budget <= 0.0 {
        return Err(Error::InvalidArgument("max_total_budget must be > 0".into()));
    }
    let mut pass_budgets = Vec::new();
    let mut consolidations = 0;
    let mut total_spent = 0.0;
    let mut exhausted = false;

    'passes: while !state.unsolved.is_empty() {
        if total_spent >= max_total_budget {
            exhausted = true;
            break;
        }
        state.pass_count += 1;
        let pass = state.pass_count;
        pass_budgets.push(state.c);
        let mut solved_now = Vec::new();
        for &task in &state.unsolved {
            if total_spent >= max_total_budget {
                exhausted = true;
                state.unsolved.retain(|t| !solved_now.contains(t));
                break 'passes;
            }
            let r = learner.attempt(task, state.c, pass)?;
            total_spent += r.spent;
            if r.solved {
                learner.consolidate(task, state.lambda * state.c, pass)?;
                consolidations += 1;
                state.solved.push(SolvedTask {
                    task,
                    pass,
                    budget: state.c,
                });
                solved_now.push(task);
            }
        }
        state.unsolved.retain(|t| !solved_now.contains(t));
        if solved_now.is_empty() {
            let old = state.c;
            state.c *= 2.0;
            learner.budget_doubled(pass, old, state.c);
        } else {
            state.c = state.c0;
        }
    }

    Ok(CurriculumReport {
        solved: state.solved,
        unsolved: state.unsolved,
        pass_budgets,
        consolidations,
        total_spent,
        exhausted,
    })
}
