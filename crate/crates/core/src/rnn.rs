//! The single recurrent network that accumulates every skill.
//!
//! Topology: one fully connected recurrent hidden layer fed by the sense
//! vector `(in, goal, r)`, and a linear readout that produces, in order,
//! the action vector, the next-sense prediction and the remaining-reward
//! prediction. Each environment step runs `micro_steps` recurrent updates
//! with the sense vector held fixed before the readout is taken.
//!
//! All parameters live in one flat [`WeightVector`] so black-box search can
//! treat the network as a point in `R^d`, while [`Network::bptt_gradient`]
//! provides exact gradients for consolidation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::consolidate::{ConsolidationBatch, LossTerms, LossWeights, TrialTargets};
use crate::error::{Error, Result};
use crate::par;

/// Squashing function of the hidden units.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Logistic,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Logistic => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative expressed through the unit's output value.
    #[inline]
    fn slope_at_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Logistic => y * (1.0 - y),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Logistic => "logistic",
        }
    }
}

fn default_micro_steps() -> usize {
    1
}

fn default_init_range() -> f64 {
    0.1
}

/// Sizes of every unit group plus initialization settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Normal sensory inputs.
    pub m: usize,
    /// Goal inputs.
    pub p: usize,
    /// Reward inputs.
    pub n: usize,
    /// Action outputs.
    pub o: usize,
    /// Hidden recurrent units.
    pub h: usize,
    #[serde(default = "default_micro_steps")]
    pub micro_steps: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub seed: u64,
    /// Half-width of the uniform initialization interval.
    #[serde(default = "default_init_range")]
    pub init_range: f64,
}

impl NetConfig {
    pub fn new(m: usize, p: usize, n: usize, o: usize, h: usize) -> Self {
        Self {
            m,
            p,
            n,
            o,
            h,
            micro_steps: default_micro_steps(),
            activation: Activation::default(),
            seed: 0,
            init_range: default_init_range(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_micro_steps(mut self, micro_steps: usize) -> Self {
        self.micro_steps = micro_steps;
        self
    }

    pub fn with_init_range(mut self, init_range: f64) -> Self {
        self.init_range = init_range;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("m", self.m),
            ("p", self.p),
            ("n", self.n),
            ("o", self.o),
            ("h", self.h),
            ("micro_steps", self.micro_steps),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        if !(self.init_range.is_finite() && self.init_range >= 0.0) {
            return Err(Error::InvalidConfig(
                "init_range must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Width of `sense(t) = (in, goal, r)`.
    pub fn input_width(&self) -> usize {
        self.m + self.p + self.n
    }

    pub fn pred_width(&self) -> usize {
        self.m + self.n
    }

    pub fn pr_width(&self) -> usize {
        self.n + 1
    }

    /// Width of the readout: actions, then `pred`, then `pr`.
    pub fn output_width(&self) -> usize {
        self.o + self.pred_width() + self.pr_width()
    }

    pub fn param_count(&self) -> usize {
        Layout::new(self).total
    }
}

/// Offsets of each parameter block inside the flat weight vector.
///
/// Row-major blocks: `w_in[h][input]`, `w_rec[h][h]`, `b_hidden[h]`,
/// `w_out[output][h]`, `b_out[output]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub w_in: usize,
    pub w_rec: usize,
    pub b_hidden: usize,
    pub w_out: usize,
    pub b_out: usize,
    pub total: usize,
}

impl Layout {
    pub fn new(cfg: &NetConfig) -> Self {
        let input = cfg.input_width();
        let hidden = cfg.h;
        let output = cfg.output_width();
        let w_in = 0;
        let w_rec = w_in + hidden * input;
        let b_hidden = w_rec + hidden * hidden;
        let w_out = b_hidden + hidden;
        let b_out = w_out + output * hidden;
        let total = b_out + output;
        Self {
            input,
            hidden,
            output,
            w_in,
            w_rec,
            b_hidden,
            w_out,
            b_out,
            total,
        }
    }
}

/// Flat parameter vector of the network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    /// Wraps raw values, rejecting non-finite entries.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("weight {i}")));
        }
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Indices whose absolute difference to `other` exceeds `eps`.
    pub fn changed_indices(&self, other: &WeightVector, eps: f64) -> Vec<usize> {
        self.0
            .iter()
            .zip(&other.0)
            .enumerate()
            .filter(|(_, (a, b))| (*a - *b).abs() > eps)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Hidden activations carried between environment steps.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenState(Vec<f64>);

impl HiddenState {
    pub fn zeros(h: usize) -> Self {
        Self(vec![0.0; h])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// `sense(t)`: normal inputs, goal inputs and reward inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct SenseVector {
    pub input: Vec<f64>,
    pub goal: Vec<f64>,
    pub reward: Vec<f64>,
}

impl SenseVector {
    pub fn new(input: Vec<f64>, goal: Vec<f64>, reward: Vec<f64>) -> Self {
        Self {
            input,
            goal,
            reward,
        }
    }

    /// Concatenation in `(in, goal, r)` order.
    pub fn concat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.input.len() + self.goal.len() + self.reward.len());
        v.extend_from_slice(&self.input);
        v.extend_from_slice(&self.goal);
        v.extend_from_slice(&self.reward);
        v
    }
}

/// One readout of the output layer, split into its three heads.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub out: Vec<f64>,
    pub pred: Vec<f64>,
    pub pr: Vec<f64>,
}

impl StepOutput {
    fn from_readout(cfg: &NetConfig, y: &[f64]) -> Self {
        let (out, rest) = y.split_at(cfg.o);
        let (pred, pr) = rest.split_at(cfg.pred_width());
        Self {
            out: out.to_vec(),
            pred: pred.to_vec(),
            pr: pr.to_vec(),
        }
    }
}

/// `R(t)`: sum of the reward components.
pub fn total_reward(r: &[f64]) -> Result<f64> {
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("reward vector".into()));
    }
    Ok(r.iter().sum())
}

/// `CR(t)` for every step: prefix sums of `R(t)` over a reward sequence.
pub fn cumulative_reward<'a, I>(rewards: I) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut acc = 0.0;
    rewards
        .into_iter()
        .map(|r| {
            acc += total_reward(r)?;
            Ok(acc)
        })
        .collect()
}

/// The network: a fixed topology plus its current weights.
#[derive(Clone, Debug)]
pub struct Network {
    config: NetConfig,
    layout: Layout,
    weights: WeightVector,
}

/// Builds a network with weights drawn uniformly from `[-init_range, init_range]`.
pub fn init_network(config: NetConfig) -> Result<(Network, WeightVector)> {
    config.validate()?;
    let layout = Layout::new(&config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let w0 = config.init_range;
    let values: Vec<f64> = (0..layout.total)
        .map(|_| if w0 == 0.0 { 0.0 } else { rng.random_range(-w0..=w0) })
        .collect();
    let weights = WeightVector(values);
    let net = Network {
        config,
        layout,
        weights: weights.clone(),
    };
    Ok((net, weights))
}

/// Per-step activations kept for the backward pass.
struct Tape {
    /// `micro_steps` hidden vectors per env step, flattened.
    hidden: Vec<f64>,
    outputs: Vec<f64>,
}

impl Network {
    pub fn new(config: NetConfig, weights: WeightVector) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if weights.len() != layout.total {
            return Err(Error::dim("weight vector", layout.total, weights.len()));
        }
        Ok(Self {
            config,
            layout,
            weights,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn weights(&self) -> &WeightVector {
        &self.weights
    }

    pub fn set_weights(&mut self, weights: WeightVector) -> Result<()> {
        if weights.len() != self.layout.total {
            return Err(Error::dim("weight vector", self.layout.total, weights.len()));
        }
        self.weights = weights;
        Ok(())
    }

    /// Same topology, different weights.
    pub fn with_weights(&self, weights: WeightVector) -> Result<Self> {
        let mut net = self.clone();
        net.set_weights(weights)?;
        Ok(net)
    }

    pub fn initial_state(&self) -> HiddenState {
        HiddenState::zeros(self.config.h)
    }

    /// One environment step: `micro_steps` recurrent updates, then readout.
    pub fn step(&self, state: &HiddenState, sense: &SenseVector) -> Result<(HiddenState, StepOutput)> {
        let cfg = &self.config;
        check_len("sense.in", cfg.m, sense.input.len())?;
        check_len("sense.goal", cfg.p, sense.goal.len())?;
        check_len("sense.r", cfg.n, sense.reward.len())?;
        check_len("hidden state", cfg.h, state.0.len())?;
        let x = sense.concat();
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sense vector".into()));
        }
        let mut h = state.0.clone();
        let mut scratch = vec![0.0; cfg.h];
        for _ in 0..cfg.micro_steps {
            self.hidden_update(&x, &h, &mut scratch);
            std::mem::swap(&mut h, &mut scratch);
        }
        let mut y = vec![0.0; self.layout.output];
        self.readout(&h, &mut y);
        Ok((HiddenState(h), StepOutput::from_readout(cfg, &y)))
    }

    /// `next = act(W_in x + W_rec h + b)`.
    fn hidden_update(&self, x: &[f64], h: &[f64], next: &mut [f64]) {
        let l = &self.layout;
        let w = self.weights.as_slice();
        let act = self.config.activation;
        for (j, slot) in next.iter_mut().enumerate() {
            let row_in = &w[l.w_in + j * l.input..l.w_in + (j + 1) * l.input];
            let row_rec = &w[l.w_rec + j * l.hidden..l.w_rec + (j + 1) * l.hidden];
            let mut a = w[l.b_hidden + j];
            a += dot(row_in, x);
            a += dot(row_rec, h);
            *slot = act.apply(a);
        }
    }

    fn readout(&self, h: &[f64], y: &mut [f64]) {
        let l = &self.layout;
        let w = self.weights.as_slice();
        for (k, slot) in y.iter_mut().enumerate() {
            let row = &w[l.w_out + k * l.hidden..l.w_out + (k + 1) * l.hidden];
            *slot = w[l.b_out + k] + dot(row, h);
        }
    }

    fn check_entry(&self, entry: &TrialTargets) -> Result<()> {
        let cfg = &self.config;
        if entry.steps.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "trial {} has no timesteps",
                entry.trial_id
            )));
        }
        for s in &entry.steps {
            check_len("target sense", cfg.input_width(), s.sense.len())?;
            check_len("target out", cfg.o, s.out.len())?;
            check_len("target pred", cfg.pred_width(), s.pred.len())?;
            check_len("target pr", cfg.pr_width(), s.pr.len())?;
        }
        Ok(())
    }

    fn forward_tape(&self, entry: &TrialTargets) -> Tape {
        let l = &self.layout;
        let micro = self.config.micro_steps;
        let steps = entry.steps.len();
        let mut hidden = vec![0.0; steps * micro * l.hidden];
        let mut outputs = vec![0.0; steps * l.output];
        let prev = vec![0.0; l.hidden];
        for (t, s) in entry.steps.iter().enumerate() {
            for k in 0..micro {
                let idx = (t * micro + k) * l.hidden;
                let (done, rest) = hidden.split_at_mut(idx);
                let cur = &mut rest[..l.hidden];
                let src: &[f64] = if t == 0 && k == 0 { &prev } else { &done[idx - l.hidden..] };
                self.hidden_update(&s.sense, src, cur);
            }
            let last = (t * micro + micro - 1) * l.hidden;
            self.readout(
                &hidden[last..last + l.hidden],
                &mut outputs[t * l.output..(t + 1) * l.output],
            );
        }
        Tape { hidden, outputs }
    }

    /// Masked squared error of one trial, split by head.
    fn trial_loss(&self, entry: &TrialTargets, weights: &LossWeights, tape: &Tape) -> LossTerms {
        let cfg = &self.config;
        let l = &self.layout;
        let mut terms = LossTerms::default();
        for (t, s) in entry.steps.iter().enumerate() {
            let y = &tape.outputs[t * l.output..(t + 1) * l.output];
            let (y_out, rest) = y.split_at(cfg.o);
            let (y_pred, y_pr) = rest.split_at(cfg.pred_width());
            if s.action_mask {
                terms.action += weights.action * sq_err(y_out, &s.out);
            }
            if s.pred_mask {
                terms.pred += weights.pred * sq_err(y_pred, &s.pred);
            }
            if s.pr_mask {
                terms.pr += weights.pr * sq_err(y_pr, &s.pr);
            }
        }
        terms
    }

    /// Loss of a batch without gradients.
    pub fn batch_loss(&self, batch: &ConsolidationBatch) -> Result<LossTerms> {
        if batch.entries.is_empty() {
            return Err(Error::EmptyBatch);
        }
        for e in &batch.entries {
            self.check_entry(e)?;
        }
        let per_trial = par::map_slice(&batch.entries, batch.parallel, |e| {
            let tape = self.forward_tape(e);
            self.trial_loss(e, &batch.weights, &tape)
        });
        Ok(per_trial.into_iter().fold(LossTerms::default(), |a, b| a + b))
    }

    /// Exact gradient of the summed masked squared error over the batch,
    /// unrolled through every trial's full length.
    ///
    /// Per-trial gradients may be computed concurrently; they are summed in
    /// batch order so the result does not depend on scheduling.
    pub fn bptt_gradient(&self, batch: &ConsolidationBatch) -> Result<(Vec<f64>, LossTerms)> {
        if batch.entries.is_empty() {
            return Err(Error::EmptyBatch);
        }
        for e in &batch.entries {
            self.check_entry(e)?;
        }
        let per_trial = par::map_slice(&batch.entries, batch.parallel, |e| {
            self.trial_gradient(e, &batch.weights)
        });
        let mut grad = vec![0.0; self.layout.total];
        let mut loss = LossTerms::default();
        for (g, l) in per_trial {
            for (acc, v) in grad.iter_mut().zip(&g) {
                *acc += v;
            }
            loss = loss + l;
        }
        Ok((grad, loss))
    }

    fn trial_gradient(&self, entry: &TrialTargets, weights: &LossWeights) -> (Vec<f64>, LossTerms) {
        let cfg = &self.config;
        let l = &self.layout;
        let act = cfg.activation;
        let micro = cfg.micro_steps;
        let w = self.weights.as_slice();
        let tape = self.forward_tape(entry);
        let loss = self.trial_loss(entry, weights, &tape);

        let mut grad = vec![0.0; l.total];
        let mut dy = vec![0.0; l.output];
        // Gradient flowing into the final hidden state of the current step
        // from later steps.
        let mut dh_carry = vec![0.0; l.hidden];
        let mut dh = vec![0.0; l.hidden];
        let mut da = vec![0.0; l.hidden];
        let zeros = vec![0.0; l.hidden];

        for t in (0..entry.steps.len()).rev() {
            let s = &entry.steps[t];
            let y = &tape.outputs[t * l.output..(t + 1) * l.output];
            dy.iter_mut().for_each(|v| *v = 0.0);
            let heads = [
                (0, cfg.o, s.action_mask, weights.action, &s.out),
                (cfg.o, cfg.pred_width(), s.pred_mask, weights.pred, &s.pred),
                (
                    cfg.o + cfg.pred_width(),
                    cfg.pr_width(),
                    s.pr_mask,
                    weights.pr,
                    &s.pr,
                ),
            ];
            for (start, width, on, coef, target) in heads {
                if on && coef != 0.0 {
                    for i in 0..width {
                        dy[start + i] = 2.0 * coef * (y[start + i] - target[i]);
                    }
                }
            }

            let last = (t * micro + micro - 1) * l.hidden;
            let h_last = &tape.hidden[last..last + l.hidden];
            dh.copy_from_slice(&dh_carry);
            for (k, &g) in dy.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                grad[l.b_out + k] += g;
                let row = l.w_out + k * l.hidden;
                for j in 0..l.hidden {
                    grad[row + j] += g * h_last[j];
                    dh[j] += g * w[row + j];
                }
            }

            for k in (0..micro).rev() {
                let idx = (t * micro + k) * l.hidden;
                let h_cur = &tape.hidden[idx..idx + l.hidden];
                let h_prev: &[f64] = if t == 0 && k == 0 {
                    &zeros
                } else {
                    &tape.hidden[idx - l.hidden..idx]
                };
                for j in 0..l.hidden {
                    da[j] = dh[j] * act.slope_at_output(h_cur[j]);
                }
                for j in 0..l.hidden {
                    let g = da[j];
                    if g == 0.0 {
                        continue;
                    }
                    grad[l.b_hidden + j] += g;
                    let row_in = l.w_in + j * l.input;
                    for (i, xi) in s.sense.iter().enumerate() {
                        grad[row_in + i] += g * xi;
                    }
                    let row_rec = l.w_rec + j * l.hidden;
                    for i in 0..l.hidden {
                        grad[row_rec + i] += g * h_prev[i];
                    }
                }
                // dh <- W_rec^T da
                for v in dh.iter_mut() {
                    *v = 0.0;
                }
                for j in 0..l.hidden {
                    let g = da[j];
                    if g == 0.0 {
                        continue;
                    }
                    let row_rec = l.w_rec + j * l.hidden;
                    for i in 0..l.hidden {
                        dh[i] += g * w[row_rec + i];
                    }
                }
            }
            dh_carry.copy_from_slice(&dh);
        }
        (grad, loss)
    }
}

/// Regularizer applied between consolidation steps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerKind {
    /// Multiply every weight by `1 - strength`.
    #[default]
    Decay,
    /// Zero every weight with magnitude below `strength`.
    Prune,
}

pub fn apply_regularizer(
    weights: &WeightVector,
    strength: f64,
    kind: RegularizerKind,
) -> Result<WeightVector> {
    if !(strength.is_finite() && strength >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "regularizer strength must be >= 0, got {strength}"
        )));
    }
    let values = match kind {
        RegularizerKind::Decay => weights.0.iter().map(|w| w * (1.0 - strength)).collect(),
        RegularizerKind::Prune => weights
            .0
            .iter()
            .map(|&w| if w.abs() < strength { 0.0 } else { w })
            .collect(),
    };
    Ok(WeightVector(values))
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn sq_err(y: &[f64], target: &[f64]) -> f64 {
    y.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn check_len(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::dim(what, expected, got));
    }
    Ok(())
}
