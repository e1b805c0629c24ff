//! Metrics events, one JSON object per line with an `event` discriminator.
//!
//! Events carry no wall-clock data, so runs with step-count budgets write
//! byte-identical metrics files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::consolidate::{LossTerms, RetentionResult};
use crate::error::{Error, Result};
use crate::search::{BudgetUnit, SearchStatus, Winner};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case", deny_unknown_fields)]
pub enum MetricsEvent {
    TaskAttempt {
        pass: usize,
        task_id: String,
        budget: f64,
        unit: BudgetUnit,
        status: SearchStatus,
        winner: Winner,
        spent_one1: f64,
        spent_one0: f64,
        generations_one1: usize,
        generations_one0: usize,
        generation_cost: f64,
        trials: usize,
    },
    Solve {
        pass: usize,
        task_id: String,
        winner: Winner,
        budget: f64,
        relevant_trials: Vec<u64>,
    },
    Consolidation {
        task_id: String,
        budget: f64,
        steps: usize,
        initial_loss: LossTerms,
        final_loss: LossTerms,
        env_steps: u64,
    },
    RetentionCheck {
        after_task: String,
        results: Vec<RetentionResult>,
    },
    BudgetDouble {
        pass: usize,
        old_c: f64,
        new_c: f64,
    },
    TransferProbe {
        task_id: String,
        budget: f64,
        unit: BudgetUnit,
        status: SearchStatus,
        winner: Winner,
        spent_one1: f64,
        spent_one0: f64,
        generations_one1: usize,
        generations_one0: usize,
        generation_cost: f64,
    },
}

impl MetricsEvent {
    pub fn name(&self) -> &'static str {
        match self {
            MetricsEvent::TaskAttempt { .. } => "task_attempt",
            MetricsEvent::Solve { .. } => "solve",
            MetricsEvent::Consolidation { .. } => "consolidation",
            MetricsEvent::RetentionCheck { .. } => "retention_check",
            MetricsEvent::BudgetDouble { .. } => "budget_double",
            MetricsEvent::TransferProbe { .. } => "transfer_probe",
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("metrics events always serialize")
    }
}

/// Parses one metrics line, rejecting unknown events, missing or unknown
/// fields and wrong types.
pub fn validate_line(line: &str) -> Result<MetricsEvent> {
    serde_json::from_str(line).map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })
}

/// Validates every line of a metrics file's contents.
pub fn validate_text(text: &str) -> Result<Vec<MetricsEvent>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            validate_line(l).map_err(|e| match e {
                Error::Parse { message, .. } => Error::Parse { line: i + 1, message },
                other => other,
            })
        })
        .collect()
}

/// In-memory event log.
#[derive(Clone, Debug, Default)]
pub struct MetricsLog {
    events: Vec<MetricsEvent>,
}

impl MetricsLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, event: MetricsEvent) {
        self.events.push(event);
    }

    pub fn events(&self) -> &[MetricsEvent] {
        &self.events
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for e in &self.events {
            writeln!(w, "{}", e.to_line())?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn events_round_trip_through_validation() {
        let ev = MetricsEvent::BudgetDouble {
            pass: 1,
            old_c: 100.0,
            new_c: 200.0,
        };
        let line = ev.to_line();
        assert!(line.starts_with("{\"event\":\"budget_double\""));
        assert_eq!(validate_line(&line).unwrap(), ev);
    }

    #[test]
    fn schema_violations_rejected() {
        assert!(validate_line("{\"event\":\"nope\"}").is_err());
        assert!(validate_line("{\"event\":\"budget_double\",\"pass\":1,\"old_c\":1.0}").is_err());
        assert!(validate_line("{\"event\":\"budget_double\",\"pass\":1,\"old_c\":1.0,\"new_c\":2.0,\"x\":0}").is_err());
        match validate_text("{\"event\":\"budget_double\",\"pass\":1,\"old_c\":1.0,\"new_c\":2.0}\n{}\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
