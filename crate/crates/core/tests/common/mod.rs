#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use onelearn::consolidate::{ConsolidationBatch, LossWeights, StepTargets, TrialTargets};
use onelearn::rnn::{Activation, NetConfig, Network, SenseVector, WeightVector};
use onelearn::trace::{StoreHeader, TimestepRecord, Trial};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn vec_in(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-scale..scale)).collect()
}

/// A random small network with at most `max_params` weights.
pub fn random_small_net(rng: &mut ChaCha8Rng, max_params: usize) -> (Network, WeightVector) {
    loop {
        let mut cfg = NetConfig::new(
            rng.random_range(1..=3),
            rng.random_range(1..=2),
            rng.random_range(1..=2),
            rng.random_range(1..=2),
            rng.random_range(1..=3),
        )
        .with_micro_steps(rng.random_range(1..=2));
        cfg.activation = if rng.random_bool(0.5) { Activation::Tanh } else { Activation::Logistic };
        if cfg.param_count() > max_params {
            continue;
        }
        let w = WeightVector::new(vec_in(rng, cfg.param_count(), 1.0)).unwrap();
        let net = Network::new(cfg, w.clone()).unwrap();
        return (net, w);
    }
}

/// Random targets and masks of length `len` shaped for `cfg`.
pub fn random_targets(rng: &mut ChaCha8Rng, cfg: &NetConfig, len: usize, id: u64) -> TrialTargets {
    let steps = (0..len)
        .map(|_| StepTargets {
            sense: vec_in(rng, cfg.input_width(), 1.0),
            out: vec_in(rng, cfg.o, 1.0),
            pred: vec_in(rng, cfg.pred_width(), 1.0),
            pr: vec_in(rng, cfg.pr_width(), 1.0),
            action_mask: rng.random_bool(0.7),
            pred_mask: rng.random_bool(0.7),
            pr_mask: rng.random_bool(0.7),
        })
        .collect();
    TrialTargets {
        trial_id: id,
        task_id: "t".into(),
        steps,
    }
}

pub fn random_batch(rng: &mut ChaCha8Rng, cfg: &NetConfig, trials: usize, max_len: usize) -> ConsolidationBatch {
    let weights = LossWeights {
        action: rng.random_range(0.1..2.0),
        pred: rng.random_range(0.1..2.0),
        pr: rng.random_range(0.1..2.0),
    };
    let entries = (0..trials)
        .map(|i| {
            let len = rng.random_range(1..=max_len);
            random_targets(rng, cfg, len, i as u64)
        })
        .collect();
    ConsolidationBatch::new(entries, weights)
}

/// Largest violation of `|g - fd| <= max(rel * max(|g|, |fd|), abs)` over all
/// components, with `fd` the central difference of the batch loss.
pub fn finite_difference_violation(net: &Network, batch: &ConsolidationBatch, rel: f64, abs: f64) -> (f64, usize) {
    let (grad, _) = net.bptt_gradient(batch).unwrap();
    let base = net.weights().as_slice().to_vec();
    let eps = 1e-5;
    let mut worst = (0.0_f64, usize::MAX);
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += eps;
        let mut minus = base.clone();
        minus[i] -= eps;
        let lp = net.with_weights(WeightVector::new(plus).unwrap()).unwrap().batch_loss(batch).unwrap().total();
        let lm = net.with_weights(WeightVector::new(minus).unwrap()).unwrap().batch_loss(batch).unwrap().total();
        let fd = (lp - lm) / (2.0 * eps);
        let tol = (rel * grad[i].abs().max(fd.abs())).max(abs);
        let excess = (grad[i] - fd).abs() / tol;
        if excess > worst.0 {
            worst = (excess, i);
        }
    }
    worst
}

/// Random trial shaped for `header`, not yet appended.
pub fn random_trial(rng: &mut ChaCha8Rng, header: &StoreHeader, task: &str) -> Trial {
    let len = rng.random_range(1..=12);
    let steps = (0..len)
        .map(|_| TimestepRecord {
            input: vec_in(rng, header.m, 3.0),
            goal: vec_in(rng, header.p, 1.0),
            reward: vec_in(rng, header.n, 1.0),
            out: vec_in(rng, header.o, 5.0),
            pred: vec_in(rng, header.m + header.n, 5.0),
            pr: vec_in(rng, header.n + 1, 5.0),
        })
        .collect();
    let success = rng.random_bool(0.5);
    let relevant = success && rng.random_bool(0.5);
    Trial::new(task, success, relevant, steps).unwrap()
}

/// Mean over all non-final timesteps of `|pred(t) - (in(t+1), r(t+1))|^2`,
/// replaying each trial's recorded senses through `net` step by step.
pub fn mean_prediction_error(net: &Network, trials: &[&Trial]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for trial in trials {
        let mut h = net.initial_state();
        for t in 0..trial.timesteps.len() {
            let rec = &trial.timesteps[t];
            let sense = SenseVector::new(rec.input.clone(), rec.goal.clone(), rec.reward.clone());
            let (next, out) = net.step(&h, &sense).unwrap();
            h = next;
            if let Some(nx) = trial.timesteps.get(t + 1) {
                let target: Vec<f64> = nx.input.iter().chain(&nx.reward).copied().collect();
                total += out.pred.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                count += 1;
            }
        }
    }
    total / count as f64
}
