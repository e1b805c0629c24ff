use onelearn::consolidate::{consolidate, ConsolidationBudget, ConsolidationConfig};
use onelearn::env::{corner_curriculum, env_step_count, SuccessCriterion};
use onelearn::rnn::{init_network, NetConfig};
use onelearn::rollout::run_episode;
use onelearn::trace::{StoreHeader, TraceStore};

// The step counter is process-wide, so this binary holds a single test.
#[test]
fn consolidation_never_steps_the_environment() {
    let (net, w) = init_network(NetConfig::new(25, 4, 1, 4, 8).with_seed(1)).unwrap();
    let tasks = corner_curriculum(5, 5, 0.0, SuccessCriterion::default());
    let mut store = TraceStore::new(StoreHeader::for_net(net.config()));
    let before_rollouts = env_step_count();
    for (i, task) in tasks.iter().enumerate() {
        store.append_trial(run_episode(&net, task, i as u64).unwrap().trial).unwrap();
    }
    assert!(env_step_count() > before_rollouts);

    let before = env_step_count();
    let (_, report) = consolidate(
        &net,
        &w,
        &store,
        ConsolidationBudget::GradientSteps(50),
        &ConsolidationConfig::default(),
        None,
    )
    .unwrap();
    assert_eq!(env_step_count(), before);
    assert_eq!(report.env_steps, 0);
}
