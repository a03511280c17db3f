mod common;

use std::collections::HashMap;
use std::time::{Duration, Instant};

use sparc_core::agent::{Agent, Role};
use sparc_core::nn::Checkpoint;
use sparc_lab::rollout::{PoolConfig, WorkerPool, WorkerState};
use sparc_lab::trainer::{run_single_phase, Exec, MemoryRecorder};

fn pool_cfg(workers: usize, bound: usize, limit: u64) -> PoolConfig {
    PoolConfig {
        workers,
        first_id: 0,
        seed: 3,
        history_len: 8,
        snapshot_cadence: 200,
        queue_bound: bound,
        max_lead: 0,
        random_steps: limit,
        limit: Some(limit),
    }
}

fn agent() -> Agent<f32> {
    let cfg = common::tiny(&[]);
    Agent::new(cfg.method().unwrap(), cfg.dims().unwrap(), cfg.hyper(), 3).unwrap()
}

fn spawn(cfg: &PoolConfig) -> WorkerPool {
    let run = common::tiny(&[]);
    WorkerPool::spawn(
        cfg,
        &run.env_config().unwrap(),
        &run.context_spec().unwrap(),
        agent().acting_policy(Role::Adapter).unwrap(),
    )
    .unwrap()
}

#[test]
fn zero_workers_is_a_config_error() {
    let run = common::tiny(&[]);
    let err = WorkerPool::spawn(
        &pool_cfg(0, 0, 10),
        &run.env_config().unwrap(),
        &run.context_spec().unwrap(),
        agent().acting_policy(Role::Adapter).unwrap(),
    )
    .err()
    .unwrap();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn every_transition_is_stored_or_counted_as_dropped() {
    const TOTAL: u64 = 100_000;
    let pool = spawn(&pool_cfg(4, 512, TOTAL));
    let mut stored = 0u64;
    let mut last: HashMap<u32, (u64, u32)> = HashMap::new();
    loop {
        match pool.try_next() {
            Some(t) => {
                stored += 1;
                let key = (t.episode, t.episode_step);
                if let Some(prev) = last.insert(t.worker, key) {
                    assert!(key > prev, "worker {} went from {prev:?} to {key:?}", t.worker);
                }
            }
            None => std::thread::sleep(Duration::from_micros(50)),
        }
        if pool.produced() == TOTAL && pool.dropped() + stored == TOTAL {
            break;
        }
    }
    let stats = pool.join().unwrap();
    assert_eq!(stats.produced, TOTAL);
    assert_eq!(stored + stats.dropped + stats.left_in_queue, TOTAL);
    assert_eq!(last.len(), 4);
}

#[test]
fn no_drops_when_the_queue_holds_the_burst() {
    const TOTAL: u64 = 5_000;
    let pool = spawn(&pool_cfg(4, TOTAL as usize, TOTAL));
    let deadline = Instant::now() + Duration::from_secs(60);
    while pool.produced() < TOTAL && Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(5));
    }
    let stats = pool.join().unwrap();
    assert_eq!(stats.produced, TOTAL);
    assert_eq!(stats.dropped, 0);
    assert_eq!(stats.left_in_queue, TOTAL);
}

#[test]
fn workers_pick_up_a_published_snapshot() {
    let mut cfg = pool_cfg(1, 0, 20_000);
    cfg.random_steps = 0;
    cfg.max_lead = 50;
    let pool = spawn(&cfg);
    let a = agent();
    let policy = a.acting_policy(Role::Adapter).unwrap();
    let mut seen = Vec::new();
    let pull = |seen: &mut Vec<_>| {
        seen.push(pool.next_transition().unwrap());
        pool.mark_processed(seen.len() as u64);
    };
    while seen.len() < 500 {
        pull(&mut seen);
    }
    let v1 = pool.publish(policy.clone());
    let at_publish = pool.produced();
    let v2 = pool.publish(policy);
    assert!(v2 > v1 && v1 >= 1);
    while (seen.len() as u64) < at_publish + 1200 {
        pull(&mut seen);
    }
    pool.shutdown().unwrap();
    for (i, t) in seen.iter().enumerate() {
        if i as u64 >= at_publish + 1000 {
            assert!(t.snapshot_version >= v1, "step {i} used version {}", t.snapshot_version);
        }
    }
    let versions: Vec<u64> = seen.iter().map(|t| t.snapshot_version).collect();
    assert!(versions.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn snapshot_bytes_match_the_learner_parameters() {
    let pool = spawn(&pool_cfg(1, 16, 1));
    let a = agent();
    let published = a.acting_policy(Role::Adapter).unwrap();
    pool.publish(published);
    let snap = pool.snapshot();
    let enc = |p: &sparc_core::nn::ParameterSet<f32>| {
        let mut c = Checkpoint::new(snap.version);
        c.sets.push(("adapter".into(), p.clone()));
        c.encode()
    };
    assert_eq!(enc(&snap.policy.params), enc(a.adapter.as_ref().unwrap()));
    pool.shutdown().unwrap();
}

#[test]
fn context_is_fixed_within_an_episode_and_redrawn_after() {
    let run = common::tiny(&[]);
    let a = agent();
    let policy = a.acting_policy(Role::Adapter).unwrap();
    let mut w = WorkerState::new(0, 9, &run.env_config().unwrap(), &run.context_spec().unwrap(), 8);
    let mut by_episode: HashMap<u64, Vec<Vec<f32>>> = HashMap::new();
    let mut records = Vec::new();
    for _ in 0..3000 {
        let (t, rec) = w.step(&policy, 0, true).unwrap();
        let t = t.unwrap();
        by_episode.entry(t.episode).or_default().push(t.context.clone());
        records.extend(rec);
    }
    assert!(records.len() >= 3);
    for ctxs in by_episode.values() {
        assert!(ctxs.iter().all(|c| c == &ctxs[0]));
    }
    for pair in records.windows(2) {
        assert_ne!(pair[0].context, pair[1].context);
    }
}

#[test]
fn lockstep_threads_match_the_inline_loop_bitwise() {
    for method in ["sparc", "history_input", "oracle"] {
        let cfg = common::tiny(&[
            &format!("run.method={method}"),
            "rollout.deterministic=true",
            "run.total_updates=120",
        ]);
        let mut inline_log = MemoryRecorder::default();
        let (inline, _) = run_single_phase(&cfg, Exec::Inline, &mut inline_log).unwrap();
        let mut thread_log = MemoryRecorder::default();
        let (threaded, stats) = run_single_phase(&cfg, Exec::Threaded, &mut thread_log).unwrap();
        assert_eq!(inline.actor, threaded.actor, "{method}");
        assert_eq!(inline.critics, threaded.critics, "{method}");
        assert_eq!(inline.adapter, threaded.adapter, "{method}");
        assert_eq!(inline_log.steps, thread_log.steps, "{method}");
        assert_eq!(inline_log.episodes, thread_log.episodes, "{method}");
        assert_eq!(stats.dropped, 0);
    }
}
