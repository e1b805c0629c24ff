use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use onelearn::consolidate::{batch_from_trials, ConsolidationBatch, LossWeights};
use onelearn::env::{corner_curriculum, EnvSpec, MockSpec, SuccessCriterion, TaskDescription};
use onelearn::rnn::{init_network, NetConfig, Network, WeightVector};
use onelearn::rollout::run_episode;
use onelearn::search::{try_solve_task, BudgetUnit, EsConfig, SearchBudget};
use onelearn::trace::{StoreHeader, TraceStore};

fn setup(h: usize) -> (Network, WeightVector) {
    init_network(NetConfig::new(25, 4, 1, 4, h).with_seed(3).with_init_range(0.5)).unwrap()
}

fn replay_batch(net: &Network, trials: usize) -> ConsolidationBatch {
    let tasks = corner_curriculum(5, 5, 0.0, SuccessCriterion::default());
    let trials: Vec<_> = (0..trials)
        .map(|i| run_episode(net, &tasks[i % 4], i as u64).unwrap().trial)
        .collect();
    batch_from_trials(trials.iter(), LossWeights::default())
}

fn bench_bptt(c: &mut Criterion) {
    let mut group = c.benchmark_group("bptt_batch");
    group.sample_size(20);
    for h in [16, 64] {
        let (net, _) = setup(h);
        let batch = replay_batch(&net, 16);
        for parallel in [false, true] {
            let b = batch.clone().parallel(parallel);
            let label = if parallel { "parallel" } else { "sequential" };
            group.bench_with_input(BenchmarkId::new(label, h), &b, |bench, b| {
                bench.iter(|| net.bptt_gradient(black_box(b)).unwrap())
            });
        }
    }
    group.finish();
}

fn bench_es(c: &mut Criterion) {
    let mut group = c.benchmark_group("es_race");
    group.sample_size(10);
    let (net, w) = setup(24);
    // Never solvable, so every run spends the whole budget.
    let task = TaskDescription {
        task_id: "bench".into(),
        goal_index: 0,
        env: EnvSpec::Mock(MockSpec {
            cells: 25,
            episode_len: 40,
            succeed: false,
        }),
        criterion: SuccessCriterion::default(),
    };
    let budget = SearchBudget::new(BudgetUnit::Evaluations, 64.0).unwrap();
    for parallel in [false, true] {
        let es = EsConfig {
            population: 16,
            parallel,
            ..EsConfig::default()
        };
        let label = if parallel { "parallel" } else { "sequential" };
        group.bench_function(label, |bench| {
            bench.iter(|| {
                let mut store = TraceStore::new(StoreHeader::for_net(net.config()));
                try_solve_task(&net, &w, &w, &task, &budget, &es, &mut store, None).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_bptt, bench_es);
criterion_main!(benches);
