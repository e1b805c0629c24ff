//! Black-box search for a new control task.
//!
//! Two `(1+λ)` evolution strategies race on the task: one starts from a copy
//! of the current network (the "ONE1" arm), the other from a copy of the
//! original untrained network (the "ONE0" arm). The arm that has spent less
//! budget always runs the next generation, so at any moment the two arms'
//! spending differs by at most one generation. Every episode either arm runs
//! is appended to the trace store.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::consolidate::VarianceTracker;
use crate::env::{success_of, TaskDescription};
use crate::error::{Error, Result};
use crate::par;
use crate::rnn::{Network, WeightVector};
use crate::rollout::{check_task_fits, run_episode, Episode};
use crate::trace::TraceStore;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetUnit {
    #[default]
    EnvSteps,
    Evaluations,
    WallSeconds,
}

impl BudgetUnit {
    pub fn is_reproducible(self) -> bool {
        !matches!(self, BudgetUnit::WallSeconds)
    }
}

/// Total budget of one search, shared equally by the two arms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchBudget {
    pub unit: BudgetUnit,
    pub amount: f64,
}

impl SearchBudget {
    pub fn new(unit: BudgetUnit, amount: f64) -> Result<Self> {
        if !(amount.is_finite() && amount > 0.0) {
            return Err(Error::InvalidArgument(format!("search budget must be > 0, got {amount}")));
        }
        Ok(Self { unit, amount })
    }

    pub fn env_steps(amount: f64) -> Result<Self> {
        Self::new(BudgetUnit::EnvSteps, amount)
    }
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EsConfig {
    /// Offspring per generation.
    pub population: usize,
    pub sigma: f64,
    #[serde(default = "default_true")]
    pub elitism: bool,
    #[serde(default)]
    pub rng_seed: u64,
    /// Evaluate offspring concurrently.
    #[serde(default = "default_true")]
    pub parallel: bool,
}

impl Default for EsConfig {
    fn default() -> Self {
        Self {
            population: 8,
            sigma: 0.5,
            elitism: true,
            rng_seed: 0,
            parallel: true,
        }
    }
}

impl EsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population == 0 {
            return Err(Error::InvalidArgument("es population must be >= 1".into()));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::InvalidArgument("es sigma must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStatus {
    Solved,
    Failed,
}

/// Which copy produced the solution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Winner {
    One1Origin,
    One0Origin,
    None,
}

/// Per-arm bookkeeping, index 0 = ONE1 arm, index 1 = ONE0 arm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub spent: f64,
    pub generations: usize,
    pub episodes: usize,
    /// Parent fitness after each generation.
    pub best_fitness: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchOutcome {
    pub status: SearchStatus,
    pub winner: Winner,
    pub final_weights: Option<WeightVector>,
    pub relevant_trial_ids: Vec<u64>,
    pub all_trial_ids: Vec<u64>,
    pub one1: ArmReport,
    pub one0: ArmReport,
    /// Upper bound on what one generation can cost in the budget unit.
    pub generation_cost: f64,
    pub unit: BudgetUnit,
}

impl SearchOutcome {
    pub fn spent_total(&self) -> f64 {
        self.one1.spent + self.one0.spent
    }

    pub fn spend_gap(&self) -> f64 {
        (self.one1.spent - self.one0.spent).abs()
    }
}

/// Adds independent `N(0, sigma^2)` noise to every weight.
pub fn perturb(weights: &WeightVector, sigma: f64, rng: &mut ChaCha8Rng) -> Result<WeightVector> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(weights.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let values = weights.as_slice().iter().map(|w| w + normal.sample(rng)).collect();
    WeightVector::new(values)
}

fn mix_seed(parts: &[u64]) -> u64 {
    // splitmix64 over the parts
    let mut z: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        z = z.wrapping_add(p).wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

fn fitness_of(episodes: &[Episode]) -> f64 {
    episodes.iter().map(|e| e.trial.final_cr).sum::<f64>() / episodes.len() as f64
}

fn run_candidate(template: &Network, weights: &WeightVector, task: &TaskDescription, n_trials: usize, seed: u64) -> Result<Vec<Episode>> {
    let net = template.with_weights(weights.clone())?;
    (0..n_trials)
        .map(|j| run_episode(&net, task, mix_seed(&[seed, j as u64])))
        .collect()
}

/// Runs `n_trials` episodes; fitness is the mean final cumulative reward.
/// With `record`, every trial (including failures) is appended to `store`.
pub fn evaluate_candidate(
    template: &Network,
    weights: &WeightVector,
    task: &TaskDescription,
    n_trials: usize,
    seed: u64,
    store: &mut TraceStore,
    record: bool,
) -> Result<(f64, Vec<u64>)> {
    if n_trials == 0 {
        return Err(Error::InvalidArgument("n_trials must be >= 1".into()));
    }
    check_task_fits(template, task)?;
    let episodes = run_candidate(template, weights, task, n_trials, seed)?;
    let fitness = fitness_of(&episodes);
    let mut ids = Vec::new();
    if record {
        for ep in episodes {
            ids.push(store.append_trial(ep.trial)?);
        }
    }
    Ok((fitness, ids))
}

struct Arm {
    origin: Winner,
    parent: WeightVector,
    parent_fitness: f64,
    rng: ChaCha8Rng,
    seed: u64,
    report: ArmReport,
}

struct Evaluated {
    weights: WeightVector,
    episodes: Vec<Episode>,
    fitness: f64,
    passed: bool,
}

/// Races a copy of `one_weights` against a copy of `one0_weights` on `task`.
///
/// Neither input vector is modified. On success the winning candidate's
/// weights are returned and its validation trials are marked relevant
/// (only the final one when the environment is deterministic); earlier
/// relevant trials of the same task are superseded first.
#[allow(clippy::too_many_arguments)]
pub fn try_solve_task(
    template: &Network,
    one_weights: &WeightVector,
    one0_weights: &WeightVector,
    task: &TaskDescription,
    budget: &SearchBudget,
    es: &EsConfig,
    store: &mut TraceStore,
    mut tracker: Option<&mut VarianceTracker>,
) -> Result<SearchOutcome> {
    es.validate()?;
    SearchBudget::new(budget.unit, budget.amount)?;
    check_task_fits(template, task)?;
    let d = template.layout().total;
    for (what, w) in [("one weights", one_weights), ("one0 weights", one0_weights)] {
        if w.len() != d {
            return Err(Error::dim(what, d, w.len()));
        }
    }

    let k = task.criterion.min_success_trials;
    let deterministic = task.env.is_deterministic();
    let cap = task.env.episode_cap() as f64;
    let mut generation_cost = match budget.unit {
        BudgetUnit::EnvSteps => (es.population * k) as f64 * cap,
        BudgetUnit::Evaluations => (es.population * k) as f64,
        BudgetUnit::WallSeconds => 0.0,
    };
    let per_arm = budget.amount / 2.0;

    let make_arm = |origin: Winner, w: &WeightVector, salt: u64| {
        let seed = mix_seed(&[es.rng_seed, salt]);
        Arm {
            origin,
            parent: w.clone(),
            parent_fitness: f64::NEG_INFINITY,
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
            report: ArmReport {
                spent: 0.0,
                generations: 0,
                episodes: 0,
                best_fitness: Vec::new(),
            },
        }
    };
    let mut arms = [
        make_arm(Winner::One1Origin, one_weights, 1),
        make_arm(Winner::One0Origin, one0_weights, 0),
    ];

    let mut all_ids = Vec::new();
    let mut relevant_ids = Vec::new();
    let mut solution: Option<(Winner, WeightVector)> = None;

    loop {
        let a = if arms[1].report.spent < arms[0].report.spent { 1 } else { 0 };
        if arms[a].report.spent >= per_arm {
            break;
        }
        let arm = &mut arms[a];
        let gen = arm.report.generations;
        let started = Instant::now();

        let candidates: Vec<WeightVector> = if gen == 0 {
            vec![arm.parent.clone()]
        } else {
            (0..es.population)
                .map(|_| perturb(&arm.parent, es.sigma, &mut arm.rng))
                .collect::<Result<_>>()?
        };
        let arm_seed = arm.seed;
        let results: Vec<Result<Evaluated>> = par::map_indexed(candidates.len(), es.parallel, |i| {
            let episodes = run_candidate(
                template,
                &candidates[i],
                task,
                k,
                mix_seed(&[arm_seed, gen as u64, i as u64]),
            )?;
            let outcomes: Vec<bool> = episodes.iter().map(|e| e.trial.success).collect();
            Ok(Evaluated {
                weights: candidates[i].clone(),
                fitness: fitness_of(&episodes),
                passed: success_of(&outcomes, &task.criterion),
                episodes,
            })
        });
        let evaluated: Vec<Evaluated> = results.into_iter().collect::<Result<_>>()?;

        let mut cost = 0.0;
        for ev in &evaluated {
            cost += match budget.unit {
                BudgetUnit::EnvSteps => ev.episodes.iter().map(|e| e.env_steps as f64).sum(),
                BudgetUnit::Evaluations => ev.episodes.len() as f64,
                BudgetUnit::WallSeconds => 0.0,
            };
        }

        // Best passing candidate, then best overall; lowest index wins ties.
        let pick = |filter: &dyn Fn(&Evaluated) -> bool| {
            evaluated
                .iter()
                .enumerate()
                .filter(|(_, e)| filter(e))
                .fold(None::<(usize, f64)>, |best, (i, e)| match best {
                    Some((_, f)) if f >= e.fitness => best,
                    _ => Some((i, e.fitness)),
                })
                .map(|(i, _)| i)
        };
        let winner_idx = pick(&|e| e.passed);
        if winner_idx.is_some() {
            store.supersede_task(&task.task_id);
        }

        for (i, ev) in evaluated.iter().enumerate() {
            let is_winner = Some(i) == winner_idx;
            let last_success = ev.episodes.iter().rposition(|e| e.trial.success);
            for (j, ep) in ev.episodes.iter().enumerate() {
                let mut trial = ep.trial.clone();
                trial.relevant = is_winner
                    && trial.success
                    && (!deterministic || Some(j) == last_success);
                let id = store.append_trial(trial)?;
                if let Some(t) = tracker.as_deref_mut() {
                    t.observe(&ev.weights);
                }
                all_ids.push(id);
                if is_winner && store.get(id).is_some_and(|t| t.relevant) {
                    relevant_ids.push(id);
                }
            }
            arm.report.episodes += ev.episodes.len();
        }

        if budget.unit == BudgetUnit::WallSeconds {
            cost = started.elapsed().as_secs_f64();
            generation_cost = generation_cost.max(cost);
        }
        arm.report.spent += cost;
        arm.report.generations += 1;

        if let Some(i) = winner_idx {
            let ev = &evaluated[i];
            arm.parent_fitness = arm.parent_fitness.max(ev.fitness);
            arm.report.best_fitness.push(arm.parent_fitness);
            solution = Some((arm.origin, ev.weights.clone()));
            break;
        }

        if let Some(i) = pick(&|_| true) {
            let ev = &evaluated[i];
            if gen == 0 || !es.elitism || ev.fitness >= arm.parent_fitness {
                arm.parent = ev.weights.clone();
                arm.parent_fitness = ev.fitness;
            }
        }
        arm.report.best_fitness.push(arm.parent_fitness);
    }

    let [one1, one0] = arms;
    let (status, winner, final_weights) = match solution {
        Some((w, weights)) => (SearchStatus::Solved, w, Some(weights)),
        None => (SearchStatus::Failed, Winner::None, None),
    };
    Ok(SearchOutcome {
        status,
        winner,
        final_weights,
        relevant_trial_ids: relevant_ids,
        all_trial_ids: all_ids,
        one1: one1.report,
        one0: one0.report,
        generation_cost,
        unit: budget.unit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvSpec, GridMazeSpec, MockSpec, SuccessCriterion};
    use crate::rnn::{init_network, NetConfig};
    use crate::trace::StoreHeader;

    fn mock_task(succeed: bool) -> TaskDescription {
        TaskDescription {
            task_id: "mock".into(),
            goal_index: 0,
            env: EnvSpec::Mock(MockSpec {
                cells: 4,
                episode_len: 3,
                succeed,
            }),
            criterion: SuccessCriterion::default(),
        }
    }

    fn setup(m: usize) -> (Network, WeightVector, TraceStore) {
        let cfg = NetConfig::new(m, 2, 1, 4, 4).with_seed(5);
        let (net, w) = init_network(cfg.clone()).unwrap();
        (net, w, TraceStore::new(StoreHeader::for_net(&cfg)))
    }

    #[test]
    fn perturb_edge_cases() {
        let w = WeightVector::new(vec![0.5; 10]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(perturb(&w, 0.0, &mut rng).unwrap(), w);
        let a = perturb(&w, 0.3, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = perturb(&w, 0.3, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        assert!(perturb(&w, -1.0, &mut rng).is_err());
    }

    #[test]
    fn perturbation_scale_matches_sigma() {
        let w = WeightVector::zeros(10_000);
        let sigma = 0.37;
        let p = perturb(&w, sigma, &mut ChaCha8Rng::seed_from_u64(21)).unwrap();
        let xs = p.as_slice();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!((var.sqrt() - sigma).abs() / sigma < 0.05);
    }

    #[test]
    fn record_flag_controls_store() {
        let (net, w, mut store) = setup(9);
        let task = TaskDescription {
            task_id: "t".into(),
            goal_index: 1,
            env: EnvSpec::GridMaze(GridMazeSpec::new(3, 3, (1, 1), (0, 0))),
            criterion: SuccessCriterion::default(),
        };
        let (f1, ids) = evaluate_candidate(&net, &w, &task, 3, 0, &mut store, false).unwrap();
        assert!(ids.is_empty() && store.is_empty());
        let (f2, ids) = evaluate_candidate(&net, &w, &task, 3, 0, &mut store, true).unwrap();
        assert_eq!(f1, f2);
        assert_eq!(ids, vec![1, 2, 3]);
        let t = store.trials();
        assert_eq!(t[0].timesteps, t[1].timesteps);
        assert_eq!(t[1].timesteps, t[2].timesteps);
    }

    #[test]
    fn always_solvable_mock_solves_in_first_generation() {
        let (net, w, mut store) = setup(4);
        let budget = SearchBudget::new(BudgetUnit::Evaluations, 20.0).unwrap();
        let out = try_solve_task(&net, &w, &w, &mock_task(true), &budget, &EsConfig::default(), &mut store, None).unwrap();
        assert_eq!(out.status, SearchStatus::Solved);
        assert_eq!(out.winner, Winner::One1Origin);
        assert_eq!(out.relevant_trial_ids.len(), 1);
        assert_eq!(out.one1.generations, 1);
        assert_eq!(out.final_weights.as_ref(), Some(&w));
    }

    #[test]
    fn unsolvable_mock_exhausts_budget() {
        let (net, w, mut store) = setup(4);
        let es = EsConfig {
            population: 2,
            ..EsConfig::default()
        };
        let budget = SearchBudget::new(BudgetUnit::Evaluations, 20.0).unwrap();
        let before = w.clone();
        let out = try_solve_task(&net, &w, &w, &mock_task(false), &budget, &es, &mut store, None).unwrap();
        assert_eq!(out.status, SearchStatus::Failed);
        assert_eq!(out.winner, Winner::None);
        assert!(out.final_weights.is_none());
        assert!(out.relevant_trial_ids.is_empty());
        assert!(!out.all_trial_ids.is_empty());
        assert_eq!(out.all_trial_ids.len(), store.len());
        assert_eq!(out.all_trial_ids.len(), out.one1.episodes + out.one0.episodes);
        assert!(out.spend_gap() <= out.generation_cost);
        assert!(out.one1.spent >= 10.0 && out.one0.spent >= 10.0);
        assert_eq!(store.relevant_count(), 0);
        assert_eq!(w, before);
    }
}
