//! One full learning step per task: race two copies on the task, then
//! consolidate everything into the network by replaying traces.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::consolidate::{
    affected_tasks, consolidate, retention_check, ConsolidationBudget, ConsolidationConfig, ConsolidationReport,
    RetentionResult, UsageMap, VarianceTracker, USAGE_EPSILON,
};
use crate::env::TaskDescription;
use crate::error::{Error, Result};
use crate::metrics::{MetricsEvent, MetricsLog};
use crate::rnn::{init_network, NetConfig, Network, WeightVector};
use crate::rollout::check_task_fits;
use crate::scheduler::{run_curriculum, AttemptResult, CurriculumLearner, CurriculumReport};
use crate::search::{try_solve_task, BudgetUnit, EsConfig, SearchBudget, SearchOutcome, SearchStatus};
use crate::trace::{StoreHeader, TraceStore};

/// How solved tasks are re-tested after each consolidation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetentionSettings {
    pub trials: usize,
    pub threshold: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for RetentionSettings {
    fn default() -> Self {
        Self {
            trials: 20,
            threshold: 0.9,
            seed: 0,
        }
    }
}

fn default_steps_per_unit() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub es: EsConfig,
    pub unit: BudgetUnit,
    pub consolidation: ConsolidationConfig,
    /// Gradient steps granted per unit of consolidation budget `λc`.
    #[serde(default = "default_steps_per_unit")]
    pub grad_steps_per_unit: f64,
    #[serde(default)]
    pub retention: RetentionSettings,
}

/// The continual learner: the network, its untrained copy, the lifelong
/// trace store and the bookkeeping the heuristics need.
pub struct AlgorithmOne {
    template: Network,
    one: WeightVector,
    one0: WeightVector,
    tasks: Vec<TaskDescription>,
    store: TraceStore,
    config: LearnerConfig,
    tracker: VarianceTracker,
    usage: UsageMap,
    metrics: MetricsLog,
    solved: BTreeSet<usize>,
    pending: Option<(usize, WeightVector)>,
    attempts: u64,
    last_outcome: Option<SearchOutcome>,
    last_consolidation: Option<ConsolidationReport>,
}

impl AlgorithmOne {
    /// Fresh learner whose initial weights also serve as the untrained copy.
    pub fn new(net: NetConfig, tasks: Vec<TaskDescription>, config: LearnerConfig) -> Result<Self> {
        let (template, w) = init_network(net)?;
        Self::from_weights(template, w.clone(), w, tasks, config)
    }

    pub fn from_weights(
        template: Network,
        one: WeightVector,
        one0: WeightVector,
        tasks: Vec<TaskDescription>,
        config: LearnerConfig,
    ) -> Result<Self> {
        for t in &tasks {
            check_task_fits(&template, t)?;
        }
        let mut ids = BTreeSet::new();
        let mut goals = BTreeSet::new();
        for t in &tasks {
            if !ids.insert(t.task_id.clone()) {
                return Err(Error::InvalidArgument(format!("duplicate task id `{}`", t.task_id)));
            }
            if !goals.insert(t.goal_index) {
                return Err(Error::InvalidArgument(format!("duplicate goal_index {}", t.goal_index)));
            }
        }
        config.es.validate()?;
        config.consolidation.validate()?;
        let store = TraceStore::new(StoreHeader::for_net(template.config()));
        let template = template.with_weights(one.clone())?;
        Ok(Self {
            template,
            one,
            one0,
            tasks,
            store,
            config,
            tracker: VarianceTracker::new(),
            usage: UsageMap::new(),
            metrics: MetricsLog::new(),
            solved: BTreeSet::new(),
            pending: None,
            attempts: 0,
            last_outcome: None,
            last_consolidation: None,
        })
    }

    pub fn weights(&self) -> &WeightVector {
        &self.one
    }

    pub fn initial_weights(&self) -> &WeightVector {
        &self.one0
    }

    pub fn network(&self) -> &Network {
        &self.template
    }

    pub fn tasks(&self) -> &[TaskDescription] {
        &self.tasks
    }

    pub fn store(&self) -> &TraceStore {
        &self.store
    }

    pub fn metrics(&self) -> &MetricsLog {
        &self.metrics
    }

    pub fn usage(&self) -> &UsageMap {
        &self.usage
    }

    pub fn last_outcome(&self) -> Option<&SearchOutcome> {
        self.last_outcome.as_ref()
    }

    pub fn last_consolidation(&self) -> Option<&ConsolidationReport> {
        self.last_consolidation.as_ref()
    }

    pub fn task_index(&self, task_id: &str) -> Result<usize> {
        self.tasks
            .iter()
            .position(|t| t.task_id == task_id)
            .ok_or_else(|| Error::UnknownTask(task_id.to_string()))
    }

    /// Tries to solve one task within `budget`; on success the winning
    /// copy is held until [`Self::consolidate_task`] folds it into the network.
    pub fn solve_task(&mut self, task: usize, budget: f64, pass: usize) -> Result<SearchOutcome> {
        let desc = self.tasks.get(task).ok_or_else(|| Error::UnknownTask(task.to_string()))?.clone();
        let mut es = self.config.es.clone();
        es.rng_seed = es.rng_seed.wrapping_add(self.attempts.wrapping_mul(0x9E37_79B9));
        self.attempts += 1;
        let search_budget = SearchBudget::new(self.config.unit, budget)?;
        let outcome = try_solve_task(
            &self.template,
            &self.one,
            &self.one0,
            &desc,
            &search_budget,
            &es,
            &mut self.store,
            Some(&mut self.tracker),
        )?;
        self.metrics.push(MetricsEvent::TaskAttempt {
            pass,
            task_id: desc.task_id.clone(),
            budget,
            unit: self.config.unit,
            status: outcome.status,
            winner: outcome.winner,
            spent_one1: outcome.one1.spent,
            spent_one0: outcome.one0.spent,
            generations_one1: outcome.one1.generations,
            generations_one0: outcome.one0.generations,
            generation_cost: outcome.generation_cost,
            trials: outcome.all_trial_ids.len(),
        });
        if let (SearchStatus::Solved, Some(w)) = (outcome.status, &outcome.final_weights) {
            self.metrics.push(MetricsEvent::Solve {
                pass,
                task_id: desc.task_id.clone(),
                winner: outcome.winner,
                budget,
                relevant_trials: outcome.relevant_trial_ids.clone(),
            });
            self.usage.record(&desc.task_id, &self.one, w, USAGE_EPSILON);
            self.solved.insert(task);
            self.pending = Some((task, w.clone()));
        }
        self.last_outcome = Some(outcome.clone());
        Ok(outcome)
    }

    /// Dream phase after solving `task`: start from the winning copy and
    /// retrain on all stored traces, then re-test the solved tasks whose
    /// weights the consolidation touched.
    pub fn consolidate_task(&mut self, task: usize, budget: f64) -> Result<ConsolidationReport> {
        let start = match self.pending.take() {
            Some((t, w)) if t == task => w,
            _ => self.one.clone(),
        };
        let steps = (budget * self.config.grad_steps_per_unit).round().max(0.0) as usize;
        let (new_weights, report) = consolidate(
            &self.template,
            &start,
            &self.store,
            ConsolidationBudget::GradientSteps(steps),
            &self.config.consolidation,
            Some(&self.tracker),
        )?;
        let task_id = self.tasks[task].task_id.clone();
        self.metrics.push(MetricsEvent::Consolidation {
            task_id: task_id.clone(),
            budget,
            steps: report.steps,
            initial_loss: report.initial_loss,
            final_loss: report.final_loss,
            env_steps: report.env_steps,
        });

        let changed: BTreeSet<usize> = self.one.changed_indices(&new_weights, USAGE_EPSILON).into_iter().collect();
        self.one = new_weights;
        self.template.set_weights(self.one.clone())?;

        let affected = affected_tasks(&self.usage, &changed);
        let to_check: Vec<TaskDescription> = self
            .tasks
            .iter()
            .enumerate()
            .filter(|(i, t)| self.solved.contains(i) && (affected.contains(&t.task_id) || *i == task))
            .map(|(_, t)| t.clone())
            .collect();
        if !to_check.is_empty() {
            let results = self.retention(&to_check)?;
            self.metrics.push(MetricsEvent::RetentionCheck {
                after_task: task_id,
                results,
            });
        }
        self.last_consolidation = Some(report.clone());
        Ok(report)
    }

    /// Re-tests the current network on `tasks`.
    pub fn retention(&self, tasks: &[TaskDescription]) -> Result<Vec<RetentionResult>> {
        let r = &self.config.retention;
        retention_check(&self.template, &self.one, tasks, r.trials, r.threshold, r.seed)
    }

    /// Solves tasks in curriculum order with budget doubling.
    pub fn run_curriculum(&mut self, c0: f64, lambda: f64, max_total_budget: f64) -> Result<CurriculumReport> {
        let n = self.tasks.len();
        run_curriculum(self, n, c0, lambda, max_total_budget)
    }
}

impl CurriculumLearner for AlgorithmOne {
    fn attempt(&mut self, task: usize, budget: f64, pass: usize) -> Result<AttemptResult> {
        let outcome = self.solve_task(task, budget, pass)?;
        Ok(AttemptResult {
            solved: outcome.status == SearchStatus::Solved,
            spent: outcome.spent_total(),
        })
    }

    fn consolidate(&mut self, task: usize, budget: f64, _pass: usize) -> Result<()> {
        self.consolidate_task(task, budget).map(|_| ())
    }

    fn budget_doubled(&mut self, pass: usize, old: f64, new: f64) {
        self.metrics.push(MetricsEvent::BudgetDouble {
            pass,
            old_c: old,
            new_c: new,
        });
    }
}
