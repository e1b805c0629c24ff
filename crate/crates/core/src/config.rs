//! Experiment configuration, read from a TOML file.
//!
//! ```toml
//! master_seed = 7
//!
//! [net]
//! m = 25
//! p = 4
//! n = 1
//! o = 4
//! h = 24
//!
//! [budgets]
//! unit = "env_steps"
//! c0 = 20000
//! lambda = 0.1
//! max_total_budget = 1000000
//!
//! [paths]
//! trace_file = "out/traces.jsonl"
//! metrics_file = "out/metrics.jsonl"
//! checkpoint_dir = "out/ckpt"
//!
//! [corner_curriculum]
//! width = 5
//! height = 5
//! ```
//!
//! Tasks come either from `[[tasks]]` entries or from a `[corner_curriculum]`
//! table. Relative paths are resolved against the config file's directory.
//! Every RNG seed is derived from `master_seed`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::consolidate::ConsolidationConfig;
use crate::env::{corner_curriculum, SuccessCriterion, TaskDescription};
use crate::error::{Error, Result};
use crate::learner::{LearnerConfig, RetentionSettings};
use crate::rnn::NetConfig;
use crate::search::{BudgetUnit, EsConfig};

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budgets {
    #[serde(default)]
    pub unit: BudgetUnit,
    pub c0: f64,
    pub lambda: f64,
    pub max_total_budget: f64,
    #[serde(default = "one")]
    pub grad_steps_per_unit: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub trace_file: PathBuf,
    pub metrics_file: PathBuf,
    pub checkpoint_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CornerCurriculum {
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub slip_prob: f64,
    #[serde(default)]
    pub criterion: SuccessCriterion,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    /// Episodes per task for `eval`.
    #[serde(default = "default_eval_trials")]
    pub trials: usize,
}

fn default_eval_trials() -> usize {
    20
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            trials: default_eval_trials(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub net: NetConfig,
    pub tasks: Vec<TaskDescription>,
    pub es: EsConfig,
    pub budgets: Budgets,
    pub consolidation: ConsolidationConfig,
    pub retention: RetentionSettings,
    pub eval: EvalSettings,
    pub paths: Paths,
}

/// Seed for an independent random stream `stream` under `master`.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const NET_STREAM: u64 = 1;
const ES_STREAM: u64 = 2;
const REPLAY_STREAM: u64 = 3;
const RETENTION_STREAM: u64 = 4;
pub const EVAL_STREAM: u64 = 5;
pub const PROBE_STREAM: u64 = 6;

/// Turns serde's "missing field `x`" into the dotted path `section.x`.
fn section_error(section: &str, err: toml::de::Error) -> Error {
    let msg = err.message().to_string();
    if let Some(rest) = msg.strip_prefix("missing field `") {
        if let Some(name) = rest.split('`').next() {
            return Error::field(format!("{section}.{name}"), "missing required field");
        }
    }
    if let Some(rest) = msg.strip_prefix("unknown field `") {
        if let Some(name) = rest.split('`').next() {
            return Error::field(format!("{section}.{name}"), "unknown field");
        }
    }
    Error::field(section, msg)
}

fn section<T: DeserializeOwned>(table: &toml::Table, name: &str) -> Result<Option<T>> {
    match table.get(name) {
        None => Ok(None),
        Some(v) => v
            .clone()
            .try_into()
            .map(Some)
            .map_err(|e| section_error(name, e)),
    }
}

fn required<T: DeserializeOwned>(table: &toml::Table, name: &str) -> Result<T> {
    section(table, name)?.ok_or_else(|| Error::field(name, "missing required section"))
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses `text`; relative paths are joined onto `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string()))?;
        const KNOWN: [&str; 10] = [
            "master_seed",
            "net",
            "tasks",
            "corner_curriculum",
            "es",
            "budgets",
            "consolidation",
            "retention",
            "eval",
            "paths",
        ];
        if let Some(k) = table.keys().find(|k| !KNOWN.contains(&k.as_str())) {
            return Err(Error::field(k.as_str(), "unknown key"));
        }

        let master_seed = match table.get("master_seed") {
            None => 0,
            Some(toml::Value::Integer(i)) if *i >= 0 => *i as u64,
            Some(_) => return Err(Error::field("master_seed", "expected a non-negative integer")),
        };
        let net: NetConfig = required(&table, "net")?;
        let es: EsConfig = section(&table, "es")?.unwrap_or_default();
        let budgets: Budgets = required(&table, "budgets")?;
        let consolidation: ConsolidationConfig = section(&table, "consolidation")?.unwrap_or_default();
        let retention: RetentionSettings = section(&table, "retention")?.unwrap_or_default();
        let eval: EvalSettings = section(&table, "eval")?.unwrap_or_default();
        let mut paths: Paths = required(&table, "paths")?;

        let explicit: Option<Vec<TaskDescription>> = section(&table, "tasks")?;
        let corners: Option<CornerCurriculum> = section(&table, "corner_curriculum")?;
        let tasks = match (explicit, corners) {
            (Some(_), Some(_)) => {
                return Err(Error::field("tasks", "give either [[tasks]] or [corner_curriculum], not both"))
            }
            (Some(t), None) => t,
            (None, Some(c)) => corner_curriculum(c.width, c.height, c.slip_prob, c.criterion),
            (None, None) => return Err(Error::field("tasks", "no tasks configured")),
        };

        for p in [&mut paths.trace_file, &mut paths.metrics_file, &mut paths.checkpoint_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }

        let mut cfg = Self {
            master_seed,
            net,
            tasks,
            es,
            budgets,
            consolidation,
            retention,
            eval,
            paths,
        };
        cfg.reseed(master_seed);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Replaces the master seed and every seed derived from it.
    pub fn reseed(&mut self, master_seed: u64) {
        self.master_seed = master_seed;
        self.net.seed = derive_seed(master_seed, NET_STREAM);
        self.es.rng_seed = derive_seed(master_seed, ES_STREAM);
        self.consolidation.replay.rng_seed = derive_seed(master_seed, REPLAY_STREAM);
        self.retention.seed = derive_seed(master_seed, RETENTION_STREAM);
    }

    pub fn validate(&self) -> Result<()> {
        let tag = |name: &'static str| move |e: Error| Error::field(name, e.to_string());
        self.net.validate().map_err(tag("net"))?;
        self.es.validate().map_err(tag("es"))?;
        self.consolidation.validate().map_err(tag("consolidation"))?;
        let b = &self.budgets;
        for (name, v) in [
            ("budgets.c0", b.c0),
            ("budgets.lambda", b.lambda),
            ("budgets.max_total_budget", b.max_total_budget),
            ("budgets.grad_steps_per_unit", b.grad_steps_per_unit),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::field(name, format!("must be a positive number, got {v}")));
            }
        }
        if self.retention.trials == 0 {
            return Err(Error::field("retention.trials", "must be >= 1"));
        }
        if !(self.retention.threshold > 0.0 && self.retention.threshold <= 1.0) {
            return Err(Error::field("retention.threshold", "must be in (0, 1]"));
        }
        if self.tasks.is_empty() {
            return Err(Error::field("tasks", "no tasks configured"));
        }
        let mut ids = BTreeSet::new();
        let mut goals = BTreeSet::new();
        for (i, t) in self.tasks.iter().enumerate() {
            t.validate(self.net.p).map_err(|e| Error::field(format!("tasks[{i}]"), e.to_string()))?;
            if !ids.insert(&t.task_id) {
                return Err(Error::field(format!("tasks[{i}].task_id"), format!("duplicate id `{}`", t.task_id)));
            }
            if !goals.insert(t.goal_index) {
                return Err(Error::field(format!("tasks[{i}].goal_index"), "duplicate goal index"));
            }
            let fits = t.env.obs_dim() == self.net.m && t.env.reward_dim() == self.net.n && t.env.action_dim() <= self.net.o;
            if !fits {
                return Err(Error::field(
                    format!("tasks[{i}].env"),
                    format!(
                        "needs m = {}, n = {}, o >= {}",
                        t.env.obs_dim(),
                        t.env.reward_dim(),
                        t.env.action_dim()
                    ),
                ));
            }
        }
        let p = &self.paths;
        if p.trace_file == p.metrics_file || p.trace_file == p.checkpoint_dir || p.metrics_file == p.checkpoint_dir {
            return Err(Error::field("paths", "trace_file, metrics_file and checkpoint_dir must be distinct"));
        }
        Ok(())
    }

    pub fn learner_config(&self) -> LearnerConfig {
        LearnerConfig {
            es: self.es.clone(),
            unit: self.budgets.unit,
            consolidation: self.consolidation.clone(),
            grad_steps_per_unit: self.budgets.grad_steps_per_unit,
            retention: self.retention.clone(),
        }
    }

    pub fn task(&self, task_id: &str) -> Result<&TaskDescription> {
        self.tasks
            .iter()
            .find(|t| t.task_id == task_id)
            .ok_or_else(|| Error::UnknownTask(task_id.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
master_seed = 3

[net]
m = 25
p = 4
n = 1
o = 4
h = 8

[budgets]
c0 = 1000
lambda = 0.5
max_total_budget = 10000

[paths]
trace_file = "t.jsonl"
metrics_file = "m.jsonl"
checkpoint_dir = "ckpt"

[corner_curriculum]
width = 5
height = 5
"#;

    #[test]
    fn parses_minimal_config() {
        let c = ExperimentConfig::parse(BASE, Path::new("/tmp/x")).unwrap();
        assert_eq!(c.tasks.len(), 4);
        assert_eq!(c.paths.trace_file, Path::new("/tmp/x/t.jsonl"));
        assert_eq!(c.net.seed, derive_seed(3, NET_STREAM));
        assert_eq!(c.budgets.unit, BudgetUnit::EnvSteps);
    }

    #[test]
    fn missing_hidden_size_names_the_field() {
        let text = BASE.replace("h = 8\n", "");
        let err = ExperimentConfig::parse(&text, Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("net.h"), "{err}");
    }

    #[test]
    fn rejects_shared_paths() {
        let text = BASE.replace("m.jsonl", "t.jsonl");
        let err = ExperimentConfig::parse(&text, Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("paths"), "{err}");
    }

    #[test]
    fn rejects_mismatched_maze() {
        let text = BASE.replace("m = 25", "m = 9");
        let err = ExperimentConfig::parse(&text, Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("tasks[0].env"), "{err}");
    }

    #[test]
    fn unknown_keys_are_errors() {
        let text = BASE.replace("[budgets]", "[budgets]\nlamda = 1");
        let err = ExperimentConfig::parse(&text, Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("budgets.lamda"), "{err}");
    }

    #[test]
    fn reseed_changes_every_stream() {
        let mut c = ExperimentConfig::parse(BASE, Path::new(".")).unwrap();
        let before = c.clone();
        c.reseed(4);
        assert_ne!(c.net.seed, before.net.seed);
        assert_ne!(c.es.rng_seed, before.es.rng_seed);
        assert_ne!(c.consolidation.replay.rng_seed, before.consolidation.replay.rng_seed);
    }
}
