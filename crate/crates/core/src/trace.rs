//! Lifelong, append-only storage of every trial's input-output trace.
//!
//! The on-disk form is JSON Lines: a header object on line 1, then one
//! trial object per line. Floats are written in shortest round-trip form so
//! `load(save(store))` is exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rnn::{cumulative_reward, NetConfig};

pub const FORMAT_VERSION: u64 = 1;

/// Tolerance for the stored `final_cr` against recomputation.
pub const FINAL_CR_TOLERANCE: f64 = 1e-9;

/// One timestep `all(t) = sense(t) ++ out(t) ++ pred(t) ++ PR(t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimestepRecord {
    #[serde(rename = "in")]
    pub input: Vec<f64>,
    pub goal: Vec<f64>,
    #[serde(rename = "r")]
    pub reward: Vec<f64>,
    pub out: Vec<f64>,
    pub pred: Vec<f64>,
    pub pr: Vec<f64>,
}

impl TimestepRecord {
    /// Concatenated sense vector `(in, goal, r)`.
    pub fn sense(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.input.len() + self.goal.len() + self.reward.len());
        v.extend_from_slice(&self.input);
        v.extend_from_slice(&self.goal);
        v.extend_from_slice(&self.reward);
        v
    }

    fn all_finite(&self) -> bool {
        [&self.input, &self.goal, &self.reward, &self.out, &self.pred, &self.pr]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// A complete episode trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub trial_id: u64,
    pub task_id: String,
    pub success: bool,
    pub relevant: bool,
    pub final_cr: f64,
    pub timesteps: Vec<TimestepRecord>,
}

impl Trial {
    /// Builds a trial with `final_cr` computed from its rewards. The id is
    /// assigned by the store on append.
    pub fn new(task_id: impl Into<String>, success: bool, relevant: bool, timesteps: Vec<TimestepRecord>) -> Result<Self> {
        let final_cr = recompute_final_cr(&timesteps)?;
        Ok(Self {
            trial_id: 0,
            task_id: task_id.into(),
            success,
            relevant,
            final_cr,
            timesteps,
        })
    }

    pub fn len(&self) -> usize {
        self.timesteps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timesteps.is_empty()
    }

    /// Agent cell indices visited (argmax of `in`), for trajectory comparisons.
    pub fn trajectory(&self) -> Vec<usize> {
        self.timesteps
            .iter()
            .map(|s| {
                s.input
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0
            })
            .collect()
    }
}

fn recompute_final_cr(timesteps: &[TimestepRecord]) -> Result<f64> {
    let cr = cumulative_reward(timesteps.iter().map(|s| s.reward.as_slice()))?;
    Ok(cr.last().copied().unwrap_or(0.0))
}

/// First line of a trace file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreHeader {
    pub format_version: u64,
    pub m: usize,
    pub p: usize,
    pub n: usize,
    pub o: usize,
}

impl StoreHeader {
    pub fn new(m: usize, p: usize, n: usize, o: usize) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            m,
            p,
            n,
            o,
        }
    }

    pub fn for_net(cfg: &NetConfig) -> Self {
        Self::new(cfg.m, cfg.p, cfg.n, cfg.o)
    }
}

/// How trials are selected for replay.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "k")]
pub enum ReplayMode {
    All,
    RelevantOnly,
    UniformSample(usize),
    Recent(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayPolicy {
    #[serde(flatten)]
    pub mode: ReplayMode,
    #[serde(default)]
    pub rng_seed: u64,
}

impl ReplayPolicy {
    pub fn new(mode: ReplayMode, rng_seed: u64) -> Result<Self> {
        match mode {
            ReplayMode::UniformSample(0) | ReplayMode::Recent(0) => {
                Err(Error::InvalidArgument("replay sample size k must be >= 1".into()))
            }
            _ => Ok(Self { mode, rng_seed }),
        }
    }

    pub fn all() -> Self {
        Self {
            mode: ReplayMode::All,
            rng_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceStore {
    header: StoreHeader,
    trials: Vec<Trial>,
    next_id: u64,
}

impl TraceStore {
    pub fn new(header: StoreHeader) -> Self {
        Self {
            header,
            trials: Vec::new(),
            next_id: 1,
        }
    }

    pub fn header(&self) -> &StoreHeader {
        &self.header
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    /// Trials in id order.
    pub fn trials(&self) -> &[Trial] {
        &self.trials
    }

    pub fn get(&self, trial_id: u64) -> Option<&Trial> {
        self.trials
            .binary_search_by_key(&trial_id, |t| t.trial_id)
            .ok()
            .map(|i| &self.trials[i])
    }

    pub fn relevant_count(&self) -> usize {
        self.trials.iter().filter(|t| t.relevant).count()
    }

    fn validate(&self, trial: &Trial) -> Result<()> {
        let h = &self.header;
        if trial.timesteps.is_empty() {
            return Err(Error::InvalidTrial("no timesteps".into()));
        }
        if trial.relevant && !trial.success {
            return Err(Error::InvalidTrial("relevant trial must be successful".into()));
        }
        for (t, s) in trial.timesteps.iter().enumerate() {
            for (what, expected, got) in [
                ("in", h.m, s.input.len()),
                ("goal", h.p, s.goal.len()),
                ("r", h.n, s.reward.len()),
                ("out", h.o, s.out.len()),
                ("pred", h.m + h.n, s.pred.len()),
                ("pr", h.n + 1, s.pr.len()),
            ] {
                if expected != got {
                    return Err(Error::dim(format!("timestep {t} field `{what}`"), expected, got));
                }
            }
            if !s.all_finite() {
                return Err(Error::NonFinite(format!("timestep {t}")));
            }
        }
        let cr = recompute_final_cr(&trial.timesteps)?;
        if !trial.final_cr.is_finite() || (cr - trial.final_cr).abs() > FINAL_CR_TOLERANCE {
            return Err(Error::InvalidTrial(format!(
                "final_cr {} disagrees with recomputed {}",
                trial.final_cr, cr
            )));
        }
        Ok(())
    }

    /// Appends a trial, assigning the next id. Earlier trials are untouched.
    pub fn append_trial(&mut self, mut trial: Trial) -> Result<u64> {
        self.validate(&trial)?;
        let id = self.next_id;
        trial.trial_id = id;
        self.trials.push(trial);
        self.next_id += 1;
        Ok(id)
    }

    /// Retires the action targets of every earlier trial of `task_id`.
    /// Traces stay in the store for prediction training.
    pub fn supersede_task(&mut self, task_id: &str) -> usize {
        let mut cleared = 0;
        for t in self.trials.iter_mut().filter(|t| t.task_id == task_id && t.relevant) {
            t.relevant = false;
            cleared += 1;
        }
        cleared
    }

    pub fn sample_replay(&self, policy: &ReplayPolicy) -> Vec<&Trial> {
        let mut rng = ChaCha8Rng::seed_from_u64(policy.rng_seed);
        self.sample_with(policy.mode, &mut rng)
    }

    /// Selection for `mode` drawing randomness from `rng`; results are in id order.
    pub fn sample_with(&self, mode: ReplayMode, rng: &mut ChaCha8Rng) -> Vec<&Trial> {
        match mode {
            ReplayMode::All => self.trials.iter().collect(),
            ReplayMode::RelevantOnly => self.trials.iter().filter(|t| t.relevant).collect(),
            ReplayMode::UniformSample(k) => {
                let k = k.min(self.trials.len());
                let mut picks = index::sample(rng, self.trials.len(), k).into_vec();
                picks.sort_unstable();
                picks.into_iter().map(|i| &self.trials[i]).collect()
            }
            ReplayMode::Recent(k) => {
                let start = self.trials.len().saturating_sub(k);
                self.trials[start..].iter().collect()
            }
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = File::create(path)?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        serde_json::to_writer(&mut *w, &self.header).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
        for t in &self.trials {
            serde_json::to_writer(&mut *w, t).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = File::open(path)?;
        Self::read_from(BufReader::new(file))
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let header: StoreHeader = match lines.next() {
            None => {
                return Err(Error::Parse {
                    line: 1,
                    message: "missing header".into(),
                })
            }
            Some((_, line)) => parse_line(&line?, 1)?,
        };
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Version {
                found: header.format_version,
                expected: FORMAT_VERSION,
            });
        }
        let mut store = TraceStore::new(header);
        for (i, line) in lines {
            let line_no = i + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let trial: Trial = parse_line(&line, line_no)?;
            if trial.trial_id < store.next_id {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("trial id {} is not increasing", trial.trial_id),
                });
            }
            store.validate(&trial).map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            store.next_id = trial.trial_id + 1;
            store.trials.push(trial);
        }
        Ok(store)
    }
}

fn parse_line<T: serde::de::DeserializeOwned>(line: &str, line_no: usize) -> Result<T> {
    serde_json::from_str(line).map_err(|e| Error::Parse {
        line: line_no,
        message: e.to_string(),
    })
}
