//! Experience collection.
//!
//! Each worker thread owns an environment, a history window and its own
//! random stream. Workers read parameters from a [`SnapshotChannel`] and push
//! transitions into a [`TransitionQueue`]; the learner is the only consumer
//! of the queue and the only publisher of snapshots.
//!
//! With one worker, `snapshot_cadence = 1`, `publish_every = 1` and
//! `max_lead = 1` the worker and learner alternate step by step and the run
//! matches the inline loop bit for bit.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::thread::JoinHandle;
use std::time::Duration;

use rand::Rng;
use serde::Serialize;
use sparc_core::agent::ActingPolicy;
use sparc_core::envs::{Context, ContextSpec, Env, EnvConfig, HistoryBuffer, Outcome};
use sparc_core::replay::Transition;
use sparc_core::rng::{worker_rng, Rng as StreamRng};

use crate::error::{LabError, Result};

/// One coherent parameter version.
#[derive(Debug)]
pub struct Snapshot {
    pub version: u64,
    pub policy: ActingPolicy<f32>,
}

/// Latest snapshot behind a lock; readers clone the `Arc`, so a worker keeps
/// one version for as long as it holds it.
#[derive(Debug)]
pub struct SnapshotChannel {
    latest: RwLock<Arc<Snapshot>>,
}

impl SnapshotChannel {
    pub fn new(policy: ActingPolicy<f32>) -> Self {
        Self {
            latest: RwLock::new(Arc::new(Snapshot { version: 0, policy })),
        }
    }

    /// Replaces the snapshot and returns its version.
    pub fn publish(&self, policy: ActingPolicy<f32>) -> u64 {
        let mut slot = self.latest.write().expect("snapshot lock");
        let version = slot.version + 1;
        *slot = Arc::new(Snapshot { version, policy });
        version
    }

    pub fn latest(&self) -> Arc<Snapshot> {
        Arc::clone(&self.latest.read().expect("snapshot lock"))
    }

    pub fn version(&self) -> u64 {
        self.latest.read().expect("snapshot lock").version
    }
}

/// Many-producer, single-consumer FIFO. When bounded and full, the oldest
/// unconsumed item is dropped and counted.
#[derive(Debug)]
pub struct TransitionQueue {
    items: Mutex<VecDeque<Transition>>,
    ready: Condvar,
    bound: Option<usize>,
    pushed: AtomicU64,
    dropped: AtomicU64,
}

impl TransitionQueue {
    /// `bound == 0` means unbounded.
    pub fn new(bound: usize) -> Self {
        Self {
            items: Mutex::new(VecDeque::new()),
            ready: Condvar::new(),
            bound: (bound > 0).then_some(bound),
            pushed: AtomicU64::new(0),
            dropped: AtomicU64::new(0),
        }
    }

    pub fn push(&self, t: Transition) {
        let mut items = self.items.lock().expect("queue lock");
        if let Some(b) = self.bound {
            while items.len() >= b {
                items.pop_front();
                self.dropped.fetch_add(1, Ordering::Relaxed);
            }
        }
        items.push_back(t);
        self.pushed.fetch_add(1, Ordering::Relaxed);
        drop(items);
        self.ready.notify_one();
    }

    pub fn try_pop(&self) -> Option<Transition> {
        self.items.lock().expect("queue lock").pop_front()
    }

    pub fn pop_timeout(&self, timeout: Duration) -> Option<Transition> {
        let mut items = self.items.lock().expect("queue lock");
        if items.is_empty() {
            items = self
                .ready
                .wait_timeout(items, timeout)
                .expect("queue lock")
                .0;
        }
        items.pop_front()
    }

    pub fn len(&self) -> usize {
        self.items.lock().expect("queue lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pushed(&self) -> u64 {
        self.pushed.load(Ordering::Relaxed)
    }

    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }
}

/// Per-episode telemetry line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeRecord {
    pub worker: u32,
    pub episode: u64,
    pub context: Vec<f64>,
    #[serde(rename = "return")]
    pub ret: f64,
    pub length: u32,
    pub outcome: &'static str,
    pub snapshot_version: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
}

fn outcome_name(o: Outcome) -> &'static str {
    match o {
        Outcome::Running => "running",
        Outcome::Success => "success",
        Outcome::Failure => "failure",
        Outcome::Timeout => "timeout",
    }
}

/// Environment side of a worker: episode bookkeeping without any threading.
#[derive(Debug)]
pub struct WorkerState {
    pub id: u32,
    env: Env,
    spec: ContextSpec,
    history: HistoryBuffer,
    rng: StreamRng,
    context: Context,
    context_f32: Vec<f32>,
    obs: Vec<f64>,
    episode: u64,
    episode_step: u32,
    ret: f64,
}

impl WorkerState {
    pub fn new(
        id: u32,
        seed: u64,
        env: &EnvConfig,
        spec: &ContextSpec,
        history_len: usize,
    ) -> Self {
        let kind = env.kind();
        let mut w = Self {
            id,
            env: env.build(),
            spec: spec.clone(),
            history: HistoryBuffer::new(history_len, kind.obs_dim(), kind.action_dim()),
            rng: worker_rng(seed, id as usize),
            context: Context::new(vec![]),
            context_f32: vec![],
            obs: vec![],
            episode: 0,
            episode_step: 0,
            ret: 0.0,
        };
        w.begin_episode();
        w
    }

    /// Fresh IND context, fresh reset seed, zeroed history.
    fn begin_episode(&mut self) {
        self.context = self.spec.sample_ind(&mut self.rng);
        self.context_f32 = self.context.values.iter().map(|&v| v as f32).collect();
        let reset_seed: u64 = self.rng.random();
        self.obs = self.env.reset(&self.context, reset_seed);
        self.history.reset();
        self.episode_step = 0;
        self.ret = 0.0;
    }

    fn finish_episode(&mut self, outcome: &'static str, version: u64, aborted: Option<String>) -> EpisodeRecord {
        let record = EpisodeRecord {
            worker: self.id,
            episode: self.episode,
            context: self.context.values.clone(),
            ret: self.ret,
            length: self.episode_step,
            outcome,
            snapshot_version: version,
            aborted,
        };
        self.episode += 1;
        self.begin_episode();
        record
    }

    pub fn context(&self) -> &Context {
        &self.context
    }

    /// One env step. `random` replaces the policy with uniform actions.
    ///
    /// An environment error aborts the episode: no transition is produced and
    /// the returned record carries the reason.
    pub fn step(
        &mut self,
        policy: &ActingPolicy<f32>,
        version: u64,
        random: bool,
    ) -> Result<(Option<Transition>, Option<EpisodeRecord>)> {
        let window = self.history.window();
        let action: Vec<f64> = if random {
            (0..policy.net.dims.action)
                .map(|_| self.rng.random_range(-1.0..1.0))
                .collect()
        } else {
            policy.act(
                &self.obs,
                &window,
                Some(&self.context.values),
                &mut self.rng,
                false,
            )?
        };
        self.history.push(&self.obs, &action);
        let result = match self.env.step(&action) {
            Ok(r) => r,
            Err(e) => {
                let rec = self.finish_episode("aborted", version, Some(e.to_string()));
                return Ok((None, Some(rec)));
            }
        };
        self.ret += result.reward;
        let done = result.outcome.is_done();
        let t = Transition {
            obs: self.obs.iter().map(|&v| v as f32).collect(),
            action: action.iter().map(|&v| v as f32).collect(),
            reward: result.reward as f32,
            next_obs: result.obs.iter().map(|&v| v as f32).collect(),
            done,
            terminal: result.terminal,
            history: window,
            context: self.context_f32.clone(),
            worker: self.id,
            episode: self.episode,
            episode_step: self.episode_step,
            snapshot_version: version,
        };
        self.episode_step += 1;
        self.obs = result.obs;
        let record = done.then(|| self.finish_episode(outcome_name(result.outcome), version, None));
        Ok((Some(t), record))
    }
}

/// Worker-pool parameters.
#[derive(Debug, Clone)]
pub struct PoolConfig {
    pub workers: usize,
    /// First worker id; worker `k` uses random stream `first_id + k`.
    pub first_id: u32,
    pub seed: u64,
    pub history_len: usize,
    pub snapshot_cadence: u64,
    pub queue_bound: usize,
    /// 0 disables pacing.
    pub max_lead: u64,
    /// Global tickets below this act uniformly at random.
    pub random_steps: u64,
    /// Stop after this many transitions in total.
    pub limit: Option<u64>,
}

#[derive(Debug)]
struct Shared {
    queue: TransitionQueue,
    snapshots: SnapshotChannel,
    tickets: AtomicU64,
    produced: AtomicU64,
    processed: AtomicU64,
    stop: AtomicBool,
    gate: Mutex<()>,
    gate_cv: Condvar,
    failure: Mutex<Option<String>>,
}

/// Counters at shutdown. `produced = consumed + dropped + left_in_queue`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RolloutStats {
    pub produced: u64,
    pub dropped: u64,
    pub left_in_queue: u64,
    pub snapshot_version: u64,
}

/// Running worker threads plus the learner-side ends of the channels.
pub struct WorkerPool {
    shared: Arc<Shared>,
    threads: Vec<JoinHandle<()>>,
    episodes: Receiver<EpisodeRecord>,
}

const WAIT_SLICE: Duration = Duration::from_millis(20);

impl WorkerPool {
    pub fn spawn(
        cfg: &PoolConfig,
        env: &EnvConfig,
        spec: &ContextSpec,
        policy: ActingPolicy<f32>,
    ) -> Result<Self> {
        if cfg.workers == 0 {
            return Err(LabError::config("rollout needs at least one worker"));
        }
        let shared = Arc::new(Shared {
            queue: TransitionQueue::new(cfg.queue_bound),
            snapshots: SnapshotChannel::new(policy),
            tickets: AtomicU64::new(0),
            produced: AtomicU64::new(0),
            processed: AtomicU64::new(0),
            stop: AtomicBool::new(false),
            gate: Mutex::new(()),
            gate_cv: Condvar::new(),
            failure: Mutex::new(None),
        });
        let (tx, rx) = mpsc::channel();
        let mut threads = Vec::with_capacity(cfg.workers);
        for k in 0..cfg.workers {
            let state = WorkerState::new(
                cfg.first_id + k as u32,
                cfg.seed,
                env,
                spec,
                cfg.history_len,
            );
            let shared = Arc::clone(&shared);
            let tx = tx.clone();
            let cfg = cfg.clone();
            let handle = std::thread::Builder::new()
                .name(format!("rollout-{k}"))
                .spawn(move || worker_loop(state, &shared, &cfg, tx))
                .map_err(|e| LabError::runtime(format!("spawning worker: {e}")))?;
            threads.push(handle);
        }
        Ok(Self {
            shared,
            threads,
            episodes: rx,
        })
    }

    /// Next transition, waiting as long as workers are alive.
    pub fn next_transition(&self) -> Result<Transition> {
        loop {
            if let Some(t) = self.shared.queue.pop_timeout(WAIT_SLICE) {
                return Ok(t);
            }
            if let Some(msg) = self.shared.failure.lock().expect("failure lock").clone() {
                return Err(LabError::runtime(msg));
            }
            if self.threads.iter().all(|t| t.is_finished()) && self.shared.queue.is_empty() {
                return Err(LabError::runtime("all rollout workers stopped"));
            }
        }
    }

    pub fn try_next(&self) -> Option<Transition> {
        self.shared.queue.try_pop()
    }

    pub fn publish(&self, policy: ActingPolicy<f32>) -> u64 {
        self.shared.snapshots.publish(policy)
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.shared.snapshots.latest()
    }

    /// Tells workers how many transitions the learner has fully handled.
    pub fn mark_processed(&self, n: u64) {
        self.shared.processed.store(n, Ordering::Release);
        let _g = self.shared.gate.lock().expect("gate lock");
        self.shared.gate_cv.notify_all();
    }

    pub fn drain_episodes(&self) -> Vec<EpisodeRecord> {
        self.episodes.try_iter().collect()
    }

    pub fn produced(&self) -> u64 {
        self.shared.produced.load(Ordering::Acquire)
    }

    pub fn dropped(&self) -> u64 {
        self.shared.queue.dropped()
    }

    /// Stops every worker and waits for them.
    pub fn shutdown(mut self) -> Result<RolloutStats> {
        self.shared.stop.store(true, Ordering::Release);
        {
            let _g = self.shared.gate.lock().expect("gate lock");
            self.shared.gate_cv.notify_all();
        }
        for t in self.threads.drain(..) {
            t.join()
                .map_err(|_| LabError::runtime("rollout worker panicked"))?;
        }
        Ok(RolloutStats {
            produced: self.shared.produced.load(Ordering::Acquire),
            dropped: self.shared.queue.dropped(),
            left_in_queue: self.shared.queue.len() as u64,
            snapshot_version: self.shared.snapshots.version(),
        })
    }

    /// Waits until every worker stopped on its own (production limit).
    pub fn join(mut self) -> Result<RolloutStats> {
        for t in self.threads.drain(..) {
            t.join()
                .map_err(|_| LabError::runtime("rollout worker panicked"))?;
        }
        if let Some(msg) = self.shared.failure.lock().expect("failure lock").clone() {
            return Err(LabError::runtime(msg));
        }
        Ok(RolloutStats {
            produced: self.shared.produced.load(Ordering::Acquire),
            dropped: self.shared.queue.dropped(),
            left_in_queue: self.shared.queue.len() as u64,
            snapshot_version: self.shared.snapshots.version(),
        })
    }
}

impl Drop for WorkerPool {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::Release);
        self.shared.gate_cv.notify_all();
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

fn worker_loop(mut state: WorkerState, shared: &Shared, cfg: &PoolConfig, tx: Sender<EpisodeRecord>) {
    let mut snapshot = shared.snapshots.latest();
    let mut since_refresh = 0u64;
    loop {
        if cfg.max_lead > 0 {
            let mut g = shared.gate.lock().expect("gate lock");
            while !shared.stop.load(Ordering::Acquire)
                && shared.produced.load(Ordering::Acquire)
                    >= shared.processed.load(Ordering::Acquire) + cfg.max_lead
            {
                g = shared.gate_cv.wait_timeout(g, WAIT_SLICE).expect("gate lock").0;
            }
        }
        if shared.stop.load(Ordering::Acquire) {
            return;
        }
        let ticket = shared.tickets.fetch_add(1, Ordering::AcqRel);
        if cfg.limit.is_some_and(|l| ticket >= l) {
            return;
        }
        if since_refresh >= cfg.snapshot_cadence {
            snapshot = shared.snapshots.latest();
            since_refresh = 0;
        }
        since_refresh += 1;
        match state.step(&snapshot.policy, snapshot.version, ticket < cfg.random_steps) {
            Ok((t, record)) => {
                if let Some(t) = t {
                    shared.queue.push(t);
                    shared.produced.fetch_add(1, Ordering::AcqRel);
                }
                if let Some(r) = record {
                    let _ = tx.send(r);
                }
            }
            Err(e) => {
                *shared.failure.lock().expect("failure lock") =
                    Some(format!("worker {}: {e}", state.id));
                shared.stop.store(true, Ordering::Release);
                return;
            }
        }
    }
}
