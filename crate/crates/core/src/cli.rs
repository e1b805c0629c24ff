//! Command-line front end: `run`, `eval`, `transfer-probe` and `traces`.
//!
//! Exit codes: 0 on success, 1 for configuration and usage errors, 2 for
//! failures while running.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{derive_seed, ExperimentConfig, EVAL_STREAM, PROBE_STREAM};
use crate::consolidate::retention_check;
use crate::error::Error;
use crate::learner::AlgorithmOne;
use crate::metrics::MetricsEvent;
use crate::par;
use crate::rnn::{init_network, NetConfig, Network, WeightVector};
use crate::search::{try_solve_task, SearchBudget};
use crate::trace::{StoreHeader, TraceStore};

#[derive(Debug, Parser)]
#[command(name = "onelearn", version, about = "Continual learning with a single recurrent network")]
pub struct Cli {
    /// Worker threads for parallel evaluation.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn the configured task set and write traces, metrics and a checkpoint.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `master_seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint on one or all configured tasks.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        task: Option<String>,
        /// Episodes per task; defaults to `eval.trials`.
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Race the checkpoint against a fresh network on a task.
    TransferProbe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        task: String,
        /// Total search budget; defaults to `budgets.c0`.
        #[arg(long)]
        budget: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// List or dump trials of a trace file.
    Traces {
        file: PathBuf,
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        success: Option<bool>,
        #[arg(long)]
        relevant: Option<bool>,
        /// Print one trial as JSON.
        #[arg(long)]
        dump: Option<u64>,
    },
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub error: Error,
}

impl CliError {
    fn usage(error: Error) -> Self {
        Self { code: 1, error }
    }
}

impl From<Error> for CliError {
    fn from(error: Error) -> Self {
        Self { code: 2, error }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

type CliResult = std::result::Result<(), CliError>;

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = if code == 0 {
                write!(out, "{e}")
            } else {
                write!(err, "{e}")
            };
            return code;
        }
    };
    match execute(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.error);
            e.code
        }
    }
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> CliResult {
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(CliError::usage(Error::InvalidArgument("--workers must be >= 1".into())));
        }
        par::configure_workers(w);
    }
    match cli.command {
        Command::Run { config, seed } => cmd_run(&config, seed, out),
        Command::Eval {
            checkpoint,
            config,
            task,
            trials,
            seed,
        } => cmd_eval(&checkpoint, &config, task.as_deref(), trials, seed, out),
        Command::TransferProbe {
            checkpoint,
            config,
            task,
            budget,
            seed,
        } => cmd_transfer_probe(&checkpoint, &config, &task, budget, seed, out),
        Command::Traces {
            file,
            task,
            success,
            relevant,
            dump,
        } => cmd_traces(&file, task.as_deref(), success, relevant, dump, out),
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> std::result::Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(path).map_err(CliError::usage)?;
    if let Some(s) = seed {
        cfg.reseed(s);
    }
    Ok(cfg)
}

fn create_parent(path: &Path) -> std::io::Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => std::fs::create_dir_all(p),
        _ => Ok(()),
    }
}

pub fn cmd_run(config: &Path, seed: Option<u64>, out: &mut dyn Write) -> CliResult {
    let cfg = load_config(config, seed)?;
    let mut learner = AlgorithmOne::new(cfg.net.clone(), cfg.tasks.clone(), cfg.learner_config())?;
    let report = learner.run_curriculum(cfg.budgets.c0, cfg.budgets.lambda, cfg.budgets.max_total_budget)?;

    let paths = &cfg.paths;
    create_parent(&paths.trace_file)?;
    create_parent(&paths.metrics_file)?;
    std::fs::create_dir_all(&paths.checkpoint_dir)?;
    learner.store().save(&paths.trace_file)?;
    learner.metrics().write_jsonl(&paths.metrics_file)?;
    let ckpt = paths.checkpoint_dir.join("final.ckpt");
    save_checkpoint(&ckpt, learner.network().config(), learner.weights())?;

    let names = |ids: &mut dyn Iterator<Item = usize>| -> Vec<String> {
        ids.map(|i| cfg.tasks[i].task_id.clone()).collect()
    };
    writeln!(out, "solved: {:?}", names(&mut report.solved.iter().map(|s| s.task)))?;
    writeln!(out, "unsolved: {:?}", names(&mut report.unsolved.iter().copied()))?;
    writeln!(out, "passes: {}  total spent: {}", report.pass_budgets.len(), report.total_spent)?;
    writeln!(out, "traces: {}", paths.trace_file.display())?;
    writeln!(out, "metrics: {}", paths.metrics_file.display())?;
    writeln!(out, "checkpoint: {}", ckpt.display())?;
    Ok(())
}

/// Loads a checkpoint and checks it matches the configured network shape.
fn load_matching(checkpoint: &Path, cfg: &ExperimentConfig) -> std::result::Result<(Network, WeightVector), CliError> {
    let (net, w) = load_checkpoint(checkpoint)?;
    let want = &cfg.net;
    let same = |a: &NetConfig| {
        (a.m, a.p, a.n, a.o, a.h, a.micro_steps) == (want.m, want.p, want.n, want.o, want.h, want.micro_steps)
            && a.activation == want.activation
    };
    if !same(&net) {
        return Err(CliError::usage(Error::InvalidConfig(format!(
            "checkpoint network (m={}, p={}, n={}, o={}, h={}) does not match the config",
            net.m, net.p, net.n, net.o, net.h
        ))));
    }
    let template = Network::new(net, w.clone())?;
    Ok((template, w))
}

pub fn cmd_eval(
    checkpoint: &Path,
    config: &Path,
    task: Option<&str>,
    trials: Option<usize>,
    seed: Option<u64>,
    out: &mut dyn Write,
) -> CliResult {
    let cfg = load_config(config, seed)?;
    let k = trials.unwrap_or(cfg.eval.trials);
    if k == 0 {
        return Err(CliError::usage(Error::InvalidArgument("--trials must be >= 1".into())));
    }
    let tasks = match task {
        Some(id) => vec![cfg.task(id).map_err(CliError::usage)?.clone()],
        None => cfg.tasks.clone(),
    };
    let (template, w) = load_matching(checkpoint, &cfg)?;
    let results = retention_check(
        &template,
        &w,
        &tasks,
        k,
        cfg.retention.threshold,
        derive_seed(cfg.master_seed, EVAL_STREAM),
    )?;
    writeln!(out, "task\tsuccess_rate\tmean_cr\tmean_length")?;
    for r in results {
        writeln!(
            out,
            "{}\t{:.3}\t{:.4}\t{:.2}",
            r.task_id, r.success_rate, r.mean_cr, r.mean_length
        )?;
    }
    Ok(())
}

pub fn cmd_transfer_probe(
    checkpoint: &Path,
    config: &Path,
    task: &str,
    budget: Option<f64>,
    seed: Option<u64>,
    out: &mut dyn Write,
) -> CliResult {
    let cfg = load_config(config, seed)?;
    let desc = cfg.task(task).map_err(CliError::usage)?.clone();
    let amount = budget.unwrap_or(cfg.budgets.c0);
    let search_budget = SearchBudget::new(cfg.budgets.unit, amount).map_err(CliError::usage)?;
    let (template, one1) = load_matching(checkpoint, &cfg)?;
    let (_, one0) = init_network(cfg.net.clone())?;
    let mut es = cfg.es.clone();
    es.rng_seed = derive_seed(cfg.master_seed, PROBE_STREAM);
    let mut store = TraceStore::new(StoreHeader::for_net(template.config()));
    let o = try_solve_task(&template, &one1, &one0, &desc, &search_budget, &es, &mut store, None)?;
    let event = MetricsEvent::TransferProbe {
        task_id: desc.task_id,
        budget: amount,
        unit: o.unit,
        status: o.status,
        winner: o.winner,
        spent_one1: o.one1.spent,
        spent_one0: o.one0.spent,
        generations_one1: o.one1.generations,
        generations_one0: o.one0.generations,
        generation_cost: o.generation_cost,
    };
    writeln!(out, "{}", event.to_line())?;
    Ok(())
}

pub fn cmd_traces(
    file: &Path,
    task: Option<&str>,
    success: Option<bool>,
    relevant: Option<bool>,
    dump: Option<u64>,
    out: &mut dyn Write,
) -> CliResult {
    let store = TraceStore::load(file)?;
    if let Some(id) = dump {
        let trial = store.get(id).ok_or(CliError::usage(Error::UnknownTrial(id)))?;
        let json = serde_json::to_string_pretty(trial).map_err(|e| Error::InvalidTrial(e.to_string()))?;
        writeln!(out, "{json}")?;
        return Ok(());
    }
    writeln!(out, "trial_id\ttask_id\tsuccess\trelevant\tlength\tfinal_cr")?;
    let rows = store.trials().iter().filter(|t| {
        task.is_none_or(|id| t.task_id == id)
            && success.is_none_or(|s| t.success == s)
            && relevant.is_none_or(|r| t.relevant == r)
    });
    for t in rows {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            t.trial_id,
            t.task_id,
            t.success,
            t.relevant,
            t.len(),
            t.final_cr
        )?;
    }
    Ok(())
}
