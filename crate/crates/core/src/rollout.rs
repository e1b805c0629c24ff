//! Running the network through one episode and recording its trace.

use crate::env::{env_reset, env_step, goal_encoding, TaskDescription};
use crate::error::{Error, Result};
use crate::rnn::{Network, SenseVector};
use crate::trace::{TimestepRecord, Trial};

/// A finished episode: its trace plus the number of environment steps used.
#[derive(Clone, Debug)]
pub struct Episode {
    pub trial: Trial,
    pub env_steps: usize,
}

/// Checks that a task's environment fits the network's unit layout.
pub fn check_task_fits(net: &Network, task: &TaskDescription) -> Result<()> {
    let cfg = net.config();
    task.validate(cfg.p)?;
    if task.env.obs_dim() != cfg.m {
        return Err(Error::dim(format!("task `{}` observation", task.task_id), cfg.m, task.env.obs_dim()));
    }
    if task.env.reward_dim() != cfg.n {
        return Err(Error::dim(format!("task `{}` reward", task.task_id), cfg.n, task.env.reward_dim()));
    }
    if cfg.o < task.env.action_dim() {
        return Err(Error::dim(format!("task `{}` actions", task.task_id), task.env.action_dim(), cfg.o));
    }
    Ok(())
}

/// Runs one episode with the task's goal input held constant. The final
/// timestep holds the terminal observation; its action is never executed.
pub fn run_episode(net: &Network, task: &TaskDescription, seed: u64) -> Result<Episode> {
    run_episode_with_goal(net, task, &goal_encoding(task, net.config().p)?, seed)
}

/// Like [`run_episode`] but with an explicit goal vector, for probing how the
/// network reacts to other tasks' goal inputs.
pub fn run_episode_with_goal(net: &Network, task: &TaskDescription, goal: &[f64], seed: u64) -> Result<Episode> {
    let (mut state, mut obs) = env_reset(&task.env, seed)?;
    let mut hidden = net.initial_state();
    let mut steps = Vec::new();
    loop {
        let sense = SenseVector::new(obs.input, goal.to_vec(), obs.reward);
        let (next_hidden, out) = net.step(&hidden, &sense)?;
        let done = obs.done;
        let action = out.out.clone();
        steps.push(TimestepRecord {
            input: sense.input,
            goal: sense.goal,
            reward: sense.reward,
            out: out.out,
            pred: out.pred,
            pr: out.pr,
        });
        if done {
            break;
        }
        let (s, o) = env_step(&task.env, &state, &action)?;
        state = s;
        obs = o;
        hidden = next_hidden;
    }
    let success = state.reached_goal && state.steps <= task.success_step_limit();
    let trial = Trial::new(task.task_id.clone(), success, false, steps)?;
    Ok(Episode {
        trial,
        env_steps: state.steps,
    })
}
