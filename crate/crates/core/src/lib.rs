//! Continual learning in a single recurrent network.
//!
//! New control tasks are learned by black-box search on copies of the
//! network; everything learned so far is then folded back into the one
//! network by gradient descent on stored behavioural traces, so old skills
//! are retained and become dependent on a task-identifying goal input.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod consolidate;
pub mod env;
pub mod error;
pub mod learner;
pub mod metrics;
pub mod par;
pub mod rnn;
pub mod rollout;
pub mod scheduler;
pub mod search;
pub mod trace;

pub use error::{Error, Result};
