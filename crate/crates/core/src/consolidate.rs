//! The dream phase: retraining the network on stored traces by gradient
//! descent, with no environment interaction.
//!
//! Three masked squared-error terms make up the loss:
//!
//! * action cloning: reproduce recorded `out(t)` of trials currently marked
//!   relevant;
//! * next-sense prediction: `pred(t)` should match `(in(t+1), r(t+1))`, on
//!   every stored trial including failures;
//! * remaining-reward prediction: `pr(t)` should match the per-component
//!   reward still to come plus its total, on relevant trials only.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Add;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{env_step_count, TaskDescription};
use crate::error::{Error, Result};
use crate::par;
use crate::rnn::{apply_regularizer, Network, RegularizerKind, WeightVector};
use crate::rollout::run_episode;
use crate::trace::{ReplayMode, ReplayPolicy, TraceStore, Trial};

/// Relative weight of each loss term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub action: f64,
    pub pred: f64,
    pub pr: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            action: 1.0,
            pred: 1.0,
            pr: 1.0,
        }
    }
}

/// Loss split by output head.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub action: f64,
    pub pred: f64,
    pub pr: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.action + self.pred + self.pr
    }

    pub fn is_finite(&self) -> bool {
        self.total().is_finite()
    }
}

impl Add for LossTerms {
    type Output = LossTerms;

    fn add(self, o: LossTerms) -> LossTerms {
        LossTerms {
            action: self.action + o.action,
            pred: self.pred + o.pred,
            pr: self.pr + o.pr,
        }
    }
}

/// Inputs, targets and masks for one replayed timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct StepTargets {
    /// `(in, goal, r)` as recorded.
    pub sense: Vec<f64>,
    pub out: Vec<f64>,
    pub pred: Vec<f64>,
    pub pr: Vec<f64>,
    pub action_mask: bool,
    pub pred_mask: bool,
    pub pr_mask: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialTargets {
    pub trial_id: u64,
    pub task_id: String,
    pub steps: Vec<StepTargets>,
}

impl TrialTargets {
    pub fn action_mask(&self) -> Vec<bool> {
        self.steps.iter().map(|s| s.action_mask).collect()
    }

    pub fn pred_mask(&self) -> Vec<bool> {
        self.steps.iter().map(|s| s.pred_mask).collect()
    }

    pub fn pr_mask(&self) -> Vec<bool> {
        self.steps.iter().map(|s| s.pr_mask).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConsolidationBatch {
    pub entries: Vec<TrialTargets>,
    pub weights: LossWeights,
    /// Compute per-trial gradients concurrently.
    pub parallel: bool,
}

impl ConsolidationBatch {
    pub fn new(entries: Vec<TrialTargets>, weights: LossWeights) -> Self {
        Self {
            entries,
            weights,
            parallel: false,
        }
    }

    pub fn parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }
}

/// Targets and masks for replaying `trial`.
///
/// Prediction targets come from every trial; action and remaining-reward
/// targets only when `relevant_now`. The final timestep never carries a
/// prediction target since no successor observation exists.
pub fn build_targets(trial: &Trial, relevant_now: bool) -> Result<TrialTargets> {
    let len = trial.timesteps.len();
    if len == 0 || (len < 2 && !relevant_now) {
        return Err(Error::InvalidTrial(format!(
            "trial {} is too short to provide prediction targets",
            trial.trial_id
        )));
    }
    let n = trial.timesteps[0].reward.len();
    // remaining[t][i] = sum over tau > t of r_i(tau)
    let mut remaining = vec![vec![0.0; n]; len];
    for t in (0..len - 1).rev() {
        let next = &trial.timesteps[t + 1].reward;
        let (head, tail) = remaining.split_at_mut(t + 1);
        for i in 0..n {
            head[t][i] = tail[0][i] + next[i];
        }
    }
    let steps = trial
        .timesteps
        .iter()
        .enumerate()
        .map(|(t, rec)| {
            let last = t + 1 == len;
            let pred = if last {
                vec![0.0; rec.input.len() + rec.reward.len()]
            } else {
                let nx = &trial.timesteps[t + 1];
                nx.input.iter().chain(&nx.reward).copied().collect()
            };
            let mut pr = remaining[t].clone();
            pr.push(remaining[t].iter().sum());
            let control = relevant_now && (!last || len == 1);
            StepTargets {
                sense: rec.sense(),
                out: rec.out.clone(),
                pred,
                pr,
                action_mask: control,
                pred_mask: !last,
                pr_mask: control,
            }
        })
        .collect();
    Ok(TrialTargets {
        trial_id: trial.trial_id,
        task_id: trial.task_id.clone(),
        steps,
    })
}

/// Builds a batch from trials using each trial's current relevance flag.
/// Trials too short to carry any target are skipped.
pub fn batch_from_trials<'a, I>(trials: I, weights: LossWeights) -> ConsolidationBatch
where
    I: IntoIterator<Item = &'a Trial>,
{
    let entries = trials
        .into_iter()
        .filter_map(|t| build_targets(t, t.relevant).ok())
        .collect();
    ConsolidationBatch::new(entries, weights)
}

/// Running per-weight mean and variance of the weights in use at the end of
/// each trial (Welford's algorithm).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VarianceTracker {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl VarianceTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn snapshots(&self) -> u64 {
        self.count
    }

    /// Records the weights that were active when a trial ended.
    pub fn observe(&mut self, weights: &WeightVector) {
        let w = weights.as_slice();
        if self.count == 0 {
            self.mean = vec![0.0; w.len()];
            self.m2 = vec![0.0; w.len()];
        }
        self.count += 1;
        let c = self.count as f64;
        for ((mean, m2), &x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(w) {
            let delta = x - *mean;
            *mean += delta / c;
            *m2 += delta * (x - *mean);
        }
    }

    /// Sample variance per weight; empty with fewer than two snapshots.
    pub fn variance(&self) -> Vec<f64> {
        if self.count < 2 {
            return Vec::new();
        }
        let c = (self.count - 1) as f64;
        self.m2.iter().map(|m| (m / c).max(0.0)).collect()
    }
}

/// Per-weight learning rates: `base_lr * clamp(var_i / median_var, floor, 1)`.
///
/// Falls back to a uniform `base_lr` with fewer than two snapshots or when
/// the median variance is zero.
pub fn variance_lr_scale(tracker: &VarianceTracker, len: usize, base_lr: f64, floor: f64) -> Vec<f64> {
    let var = tracker.variance();
    if var.len() != len {
        return vec![base_lr; len];
    }
    let mut sorted = var.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mid = sorted.len() / 2;
    let median = if sorted.len().is_multiple_of(2) {
        0.5 * (sorted[mid - 1] + sorted[mid])
    } else {
        sorted[mid]
    };
    if median <= 0.0 {
        return vec![base_lr; len];
    }
    var.iter()
        .map(|v| base_lr * (v / median).clamp(floor, 1.0))
        .collect()
}

/// Which weights each task's solution changed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UsageMap {
    tasks: BTreeMap<String, BTreeSet<usize>>,
}

/// Change threshold below which a weight counts as untouched.
pub const USAGE_EPSILON: f64 = 1e-8;

impl UsageMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records the weights whose absolute change exceeded `eps` while
    /// learning `task_id`.
    pub fn record(&mut self, task_id: &str, before: &WeightVector, after: &WeightVector, eps: f64) {
        let used = before.changed_indices(after, eps);
        self.tasks.entry(task_id.to_string()).or_default().extend(used);
    }

    pub fn insert(&mut self, task_id: &str, indices: impl IntoIterator<Item = usize>) {
        self.tasks.entry(task_id.to_string()).or_default().extend(indices);
    }

    pub fn get(&self, task_id: &str) -> Option<&BTreeSet<usize>> {
        self.tasks.get(task_id)
    }

    pub fn tasks(&self) -> impl Iterator<Item = &str> {
        self.tasks.keys().map(String::as_str)
    }
}

/// Tasks whose usage set intersects `changed`.
pub fn affected_tasks(usage: &UsageMap, changed: &BTreeSet<usize>) -> BTreeSet<String> {
    usage
        .tasks
        .iter()
        .filter(|(_, used)| !used.is_disjoint(changed))
        .map(|(t, _)| t.clone())
        .collect()
}

/// How long the dream phase runs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "unit", content = "amount")]
pub enum ConsolidationBudget {
    GradientSteps(usize),
    WallSeconds(f64),
}

fn default_lr() -> f64 {
    0.01
}

fn default_reg_interval() -> usize {
    10
}

fn default_lr_floor() -> f64 {
    0.1
}

fn default_replay() -> ReplayPolicy {
    ReplayPolicy {
        mode: ReplayMode::UniformSample(8),
        rng_seed: 0,
    }
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsolidationConfig {
    #[serde(default = "default_lr")]
    pub base_lr: f64,
    /// 0 for plain gradient descent.
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub loss_weights: LossWeights,
    /// Extra trials drawn each step, on top of the relevant ones.
    #[serde(default = "default_replay")]
    pub replay: ReplayPolicy,
    /// Always replay every currently relevant trial.
    #[serde(default = "default_true")]
    pub include_relevant: bool,
    #[serde(default)]
    pub reg_kind: RegularizerKind,
    #[serde(default)]
    pub reg_strength: f64,
    #[serde(default = "default_reg_interval")]
    pub reg_interval: usize,
    #[serde(default)]
    pub variance_lr: bool,
    #[serde(default = "default_lr_floor")]
    pub lr_floor: f64,
    /// Halve a step until the batch loss does not increase.
    #[serde(default)]
    pub line_search: bool,
    #[serde(default)]
    pub clip_norm: Option<f64>,
    #[serde(default = "default_true")]
    pub parallel: bool,
}

impl Default for ConsolidationConfig {
    fn default() -> Self {
        Self {
            base_lr: default_lr(),
            momentum: 0.0,
            loss_weights: LossWeights::default(),
            replay: default_replay(),
            include_relevant: true,
            reg_kind: RegularizerKind::Decay,
            reg_strength: 0.0,
            reg_interval: default_reg_interval(),
            variance_lr: false,
            lr_floor: default_lr_floor(),
            line_search: false,
            clip_norm: None,
            parallel: true,
        }
    }
}

impl ConsolidationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(Error::InvalidArgument("base_lr must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument("momentum must be in [0, 1)".into()));
        }
        if !(self.reg_strength.is_finite() && self.reg_strength >= 0.0) {
            return Err(Error::InvalidArgument("reg_strength must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.lr_floor) {
            return Err(Error::InvalidArgument("lr_floor must be in [0, 1]".into()));
        }
        ReplayPolicy::new(self.replay.mode, self.replay.rng_seed)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsolidationReport {
    pub steps: usize,
    /// Loss on the first step's batch before any update.
    pub initial_loss: LossTerms,
    /// Loss on the same batch after the last update.
    pub final_loss: LossTerms,
    pub trials_in_eval_batch: usize,
    /// Environment steps observed process-wide while consolidating.
    pub env_steps: u64,
}

fn select_trials<'a>(store: &'a TraceStore, cfg: &ConsolidationConfig, rng: &mut ChaCha8Rng) -> Vec<&'a Trial> {
    let mut picked: Vec<&Trial> = store.sample_with(cfg.replay.mode, rng);
    if cfg.include_relevant {
        picked.extend(store.trials().iter().filter(|t| t.relevant));
    }
    picked.sort_by_key(|t| t.trial_id);
    picked.dedup_by_key(|t| t.trial_id);
    picked
}

/// Retrains `weights` on the stored traces.
///
/// Each step draws a replay selection, computes the exact gradient of the
/// masked joint loss and takes one descent step with per-weight learning
/// rates. Only the trace store is read; the environment is never touched.
pub fn consolidate(
    template: &Network,
    weights: &WeightVector,
    store: &TraceStore,
    budget: ConsolidationBudget,
    cfg: &ConsolidationConfig,
    tracker: Option<&VarianceTracker>,
) -> Result<(WeightVector, ConsolidationReport)> {
    cfg.validate()?;
    if store.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let env_before = env_step_count();
    let mut net = template.with_weights(weights.clone())?;
    let d = weights.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.replay.rng_seed);

    let eval_batch = batch_from_trials(select_trials(store, cfg, &mut rng), cfg.loss_weights).parallel(cfg.parallel);
    if eval_batch.entries.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let initial_loss = net.batch_loss(&eval_batch)?;
    if !initial_loss.is_finite() {
        return Err(Error::Diverged("initial loss is not finite".into()));
    }

    let rates = match (cfg.variance_lr, tracker) {
        (true, Some(t)) => variance_lr_scale(t, d, cfg.base_lr, cfg.lr_floor),
        _ => vec![cfg.base_lr; d],
    };
    let mut velocity = vec![0.0; d];
    let started = Instant::now();
    let mut steps = 0usize;
    let mut first = true;

    loop {
        let more = match budget {
            ConsolidationBudget::GradientSteps(n) => steps < n,
            ConsolidationBudget::WallSeconds(s) => started.elapsed().as_secs_f64() < s,
        };
        if !more {
            break;
        }
        let batch = if first {
            first = false;
            eval_batch.clone()
        } else {
            batch_from_trials(select_trials(store, cfg, &mut rng), cfg.loss_weights).parallel(cfg.parallel)
        };
        if batch.entries.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let (mut grad, loss) = net.bptt_gradient(&batch)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged(format!("non-finite loss or gradient at step {steps}")));
        }
        if let Some(max) = cfg.clip_norm {
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > max {
                grad.iter_mut().for_each(|g| *g *= max / norm);
            }
        }
        for i in 0..d {
            velocity[i] = cfg.momentum * velocity[i] - rates[i] * grad[i];
        }

        let current = net.weights().as_slice().to_vec();
        let apply = |scale: f64| -> Result<WeightVector> {
            WeightVector::new(current.iter().zip(&velocity).map(|(w, v)| w + scale * v).collect())
        };
        let mut candidate = apply(1.0)?;
        if cfg.line_search {
            let before = loss.total();
            let mut scale = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let trial_net = net.with_weights(candidate.clone())?;
                if trial_net.batch_loss(&batch)?.total() <= before {
                    accepted = true;
                    break;
                }
                scale *= 0.5;
                candidate = apply(scale)?;
            }
            if !accepted {
                candidate = WeightVector::new(current.clone())?;
                velocity.iter_mut().for_each(|v| *v = 0.0);
            } else if scale < 1.0 {
                velocity.iter_mut().for_each(|v| *v *= scale);
            }
        }
        steps += 1;
        if cfg.reg_strength > 0.0 && cfg.reg_interval > 0 && steps.is_multiple_of(cfg.reg_interval) {
            candidate = apply_regularizer(&candidate, cfg.reg_strength, cfg.reg_kind)?;
        }
        net.set_weights(candidate)?;
    }

    let final_loss = net.batch_loss(&eval_batch)?;
    if !final_loss.is_finite() {
        return Err(Error::Diverged("final loss is not finite".into()));
    }
    let report = ConsolidationReport {
        steps,
        initial_loss,
        final_loss,
        trials_in_eval_batch: eval_batch.entries.len(),
        env_steps: env_step_count() - env_before,
    };
    Ok((net.weights().clone(), report))
}

/// Result of re-testing one task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetentionResult {
    pub task_id: String,
    pub success_rate: f64,
    pub mean_cr: f64,
    pub mean_length: f64,
    pub passed: bool,
}

/// Evaluates `weights` itself on each task with that task's goal input.
/// A task passes when its success rate over `trials` episodes is at least
/// `threshold`.
pub fn retention_check(
    template: &Network,
    weights: &WeightVector,
    tasks: &[TaskDescription],
    trials: usize,
    threshold: f64,
    seed: u64,
) -> Result<Vec<RetentionResult>> {
    if trials == 0 {
        return Err(Error::InvalidArgument("retention check needs at least one trial".into()));
    }
    let net = template.with_weights(weights.clone())?;
    tasks
        .iter()
        .map(|task| {
            crate::rollout::check_task_fits(&net, task)?;
            let episodes = par::map_indexed(trials, true, |i| run_episode(&net, task, seed.wrapping_add(i as u64)))
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            let wins = episodes.iter().filter(|e| e.trial.success).count();
            let k = trials as f64;
            let success_rate = wins as f64 / k;
            Ok(RetentionResult {
                task_id: task.task_id.clone(),
                success_rate,
                mean_cr: episodes.iter().map(|e| e.trial.final_cr).sum::<f64>() / k,
                mean_length: episodes.iter().map(|e| e.env_steps as f64).sum::<f64>() / k,
                passed: success_rate >= threshold,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rnn::{init_network, NetConfig};
    use crate::trace::{StoreHeader, TimestepRecord};

    fn rec(input: [f64; 2], r: f64) -> TimestepRecord {
        TimestepRecord {
            input: input.to_vec(),
            goal: vec![1.0],
            reward: vec![r],
            out: vec![0.3, -0.1],
            pred: vec![0.0; 3],
            pr: vec![0.0; 2],
        }
    }

    fn three_step(success: bool, relevant: bool) -> Trial {
        Trial::new(
            "a",
            success,
            relevant,
            vec![rec([1.0, 0.0], -0.01), rec([0.0, 1.0], -0.01), rec([1.0, 0.0], 1.0)],
        )
        .unwrap()
    }

    #[test]
    fn failed_trial_has_no_action_targets() {
        let t = build_targets(&three_step(false, false), false).unwrap();
        assert_eq!(t.action_mask(), vec![false; 3]);
        assert_eq!(t.pr_mask(), vec![false; 3]);
        assert_eq!(t.pred_mask(), vec![true, true, false]);
    }

    #[test]
    fn remaining_reward_targets() {
        let t = build_targets(&three_step(true, true), true).unwrap();
        let pr0 = &t.steps[0].pr;
        assert!((pr0[0] - 0.99).abs() < 1e-12);
        assert!((pr0[1] - 0.99).abs() < 1e-12);
        assert!((t.steps[1].pr[1] - 1.0).abs() < 1e-12);
        assert_eq!(t.steps[2].pr, vec![0.0, 0.0]);
        assert_eq!(t.steps[0].pred, vec![0.0, 1.0, -0.01]);
        assert_eq!(t.steps[1].pred, vec![1.0, 0.0, 1.0]);
        assert!(!t.steps[2].pred_mask);
        assert_eq!(t.action_mask(), vec![true, true, false]);
    }

    #[test]
    fn vector_reward_remaining_sums() {
        let mk = |r: [f64; 2]| TimestepRecord {
            input: vec![1.0],
            goal: vec![1.0],
            reward: r.to_vec(),
            out: vec![0.0],
            pred: vec![0.0; 3],
            pr: vec![0.0; 3],
        };
        let trial = Trial::new("v", true, true, vec![mk([0.0, 0.0]), mk([1.0, -0.5]), mk([2.0, 0.25])]).unwrap();
        let t = build_targets(&trial, true).unwrap();
        assert_eq!(t.steps[0].pr, vec![3.0, -0.25, 2.75]);
        assert_eq!(t.steps[1].pr, vec![2.0, 0.25, 2.25]);
    }

    #[test]
    fn single_step_trials() {
        let one = Trial::new("a", true, true, vec![rec([1.0, 0.0], 0.0)]).unwrap();
        let t = build_targets(&one, true).unwrap();
        assert_eq!(t.action_mask(), vec![true]);
        assert_eq!(t.pred_mask(), vec![false]);
        assert!(build_targets(&one, false).is_err());
    }

    #[test]
    fn variance_rates() {
        let mut tr = VarianceTracker::new();
        tr.observe(&WeightVector::new(vec![1.0, 2.0, 3.0]).unwrap());
        assert_eq!(variance_lr_scale(&tr, 3, 0.5, 0.1), vec![0.5; 3]);
        tr.observe(&WeightVector::new(vec![2.0, 3.0, 4.0]).unwrap());
        assert_eq!(variance_lr_scale(&tr, 3, 0.5, 0.1), vec![0.5; 3]);

        let mut tr = VarianceTracker::new();
        tr.observe(&WeightVector::new(vec![0.0, 0.0, 0.0]).unwrap());
        tr.observe(&WeightVector::new(vec![0.0, 1.0, 2.0]).unwrap());
        let rates = variance_lr_scale(&tr, 3, 1.0, 0.2);
        assert!((rates[0] - 0.2).abs() < 1e-15);
        assert!((rates[1] - 1.0).abs() < 1e-15);
        assert!((rates[2] - 1.0).abs() < 1e-15);
        assert_eq!(tr.variance(), vec![0.0, 0.5, 2.0]);
    }

    #[test]
    fn affected_tasks_examples() {
        let mut usage = UsageMap::new();
        usage.insert("a", [1, 2, 3]);
        usage.insert("b", [7]);
        let changed: BTreeSet<usize> = [4, 5].into();
        assert!(affected_tasks(&usage, &changed).is_empty());
        let changed: BTreeSet<usize> = [1, 2, 3, 9].into();
        assert_eq!(affected_tasks(&usage, &changed), ["a".to_string()].into());
        assert!(affected_tasks(&usage, &BTreeSet::new()).is_empty());
    }

    #[test]
    fn usage_map_ignores_untouched_weights() {
        let before = WeightVector::new(vec![0.0, 1.0, 2.0]).unwrap();
        let after = WeightVector::new(vec![0.0, 1.0 + 5e-9, 2.5]).unwrap();
        let mut usage = UsageMap::new();
        usage.record("a", &before, &after, USAGE_EPSILON);
        assert_eq!(usage.get("a").unwrap().iter().copied().collect::<Vec<_>>(), vec![2]);
    }

    fn small_store() -> (Network, WeightVector, TraceStore) {
        let cfg = NetConfig::new(2, 1, 1, 2, 6).with_seed(4).with_init_range(0.3);
        let (net, w) = init_network(cfg.clone()).unwrap();
        let mut store = TraceStore::new(StoreHeader::for_net(&cfg));
        store.append_trial(three_step(true, true)).unwrap();
        store.append_trial(three_step(false, false)).unwrap();
        (net, w, store)
    }

    #[test]
    fn zero_budget_is_noop() {
        let (net, w, store) = small_store();
        let (out, report) = consolidate(&net, &w, &store, ConsolidationBudget::GradientSteps(0), &ConsolidationConfig::default(), None).unwrap();
        assert_eq!(out, w);
        assert_eq!(report.steps, 0);
    }

    #[test]
    fn cloning_loss_decreases() {
        let (net, w, store) = small_store();
        let cfg = ConsolidationConfig {
            base_lr: 0.05,
            ..ConsolidationConfig::default()
        };
        let (_, report) = consolidate(&net, &w, &store, ConsolidationBudget::GradientSteps(200), &cfg, None).unwrap();
        assert!(report.final_loss.action < report.initial_loss.action);
        assert!(report.final_loss.pred < report.initial_loss.pred);
    }

    #[test]
    fn superseded_trials_train_prediction_only() {
        let (net, w, mut store) = small_store();
        store.supersede_task("a");
        let (_, report) = consolidate(&net, &w, &store, ConsolidationBudget::GradientSteps(50), &ConsolidationConfig::default(), None).unwrap();
        assert_eq!(report.initial_loss.action, 0.0);
        assert_eq!(report.final_loss.action, 0.0);
        assert_eq!(report.final_loss.pr, 0.0);
        assert!(report.final_loss.pred < report.initial_loss.pred);
    }

    #[test]
    fn empty_store_rejected() {
        let (net, w, _) = small_store();
        let store = TraceStore::new(StoreHeader::for_net(net.config()));
        assert!(consolidate(&net, &w, &store, ConsolidationBudget::GradientSteps(1), &ConsolidationConfig::default(), None).is_err());
    }
}
