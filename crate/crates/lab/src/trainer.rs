//! Learner loops for SPARC, two-phase RMA and the baselines.
//!
//! One loop serves every method: pull a transition, store it, and once the
//! buffer holds `max(B, warmup)` transitions run one update per stored
//! transition. Transitions come either from an inline worker (the plain
//! single-thread loop) or from the threaded [`WorkerPool`].

use serde::Serialize;
use sparc_core::agent::{Agent, Method, Role};
use sparc_core::envs::{ContextSpec, EnvConfig};
use sparc_core::eval::{pareto_select, CheckpointScore};
use sparc_core::nn::{Checkpoint, ParameterSet};
use sparc_core::replay::{Batch, ReplayBuffer, Transition};
use sparc_core::rng::{stream, stream_rng, Rng as StreamRng};

use crate::config::RunConfig;
use crate::error::{LabError, Result};
use crate::harness::checkpoint_metrics;
use crate::rollout::{EpisodeRecord, PoolConfig, RolloutStats, WorkerPool, WorkerState};

/// Where transitions come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    /// Worker stepped on the learner thread with the live parameters.
    Inline,
    /// Worker threads per the `[rollout]` section.
    Threaded,
}

/// One train.jsonl line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: u64,
    pub phase: &'static str,
    pub critic_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub adapter_loss: Option<f64>,
    pub entropy: Option<f64>,
    pub buffer_size: usize,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub skipped: bool,
}

/// Sink for training artifacts.
pub trait Recorder {
    fn step(&mut self, _rec: &StepRecord) -> Result<()> {
        Ok(())
    }
    fn episode(&mut self, _rec: &EpisodeRecord) -> Result<()> {
        Ok(())
    }
    fn checkpoint(&mut self, _ckpt: &Checkpoint<f32>, _score: &CheckpointScore) -> Result<()> {
        Ok(())
    }
    fn selected(&mut self, _ckpt: &Checkpoint<f32>) -> Result<()> {
        Ok(())
    }
}

/// Discards everything.
pub struct NullRecorder;

impl Recorder for NullRecorder {}

/// Keeps step records in memory.
#[derive(Default)]
pub struct MemoryRecorder {
    pub steps: Vec<StepRecord>,
    pub episodes: Vec<EpisodeRecord>,
    pub scores: Vec<CheckpointScore>,
}

impl Recorder for MemoryRecorder {
    fn step(&mut self, rec: &StepRecord) -> Result<()> {
        self.steps.push(rec.clone());
        Ok(())
    }
    fn episode(&mut self, rec: &EpisodeRecord) -> Result<()> {
        self.episodes.push(rec.clone());
        Ok(())
    }
    fn checkpoint(&mut self, _ckpt: &Checkpoint<f32>, score: &CheckpointScore) -> Result<()> {
        self.scores.push(score.clone());
        Ok(())
    }
}

/// Deployable parameters kept for checkpoint selection.
#[derive(Debug, Clone)]
pub struct SavedPolicy {
    pub id: u64,
    pub actor: ParameterSet<f32>,
    pub adapter: Option<ParameterSet<f32>>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Agent with the selected checkpoint's actor/adapter loaded.
    pub agent: Agent<f32>,
    pub scores: Vec<CheckpointScore>,
    pub selected: u64,
    /// RMA only: the phase-1 checkpoint frozen for phase 2.
    pub theta_star: Option<u64>,
    pub rollout: Vec<RolloutStats>,
    pub updates: u64,
}

#[derive(Debug, Clone)]
struct PhasePlan {
    label: &'static str,
    rollout: Role,
    eval: Role,
    updates: u64,
    regression_only: bool,
    learning_starts: u64,
    random_steps: u64,
    first_worker: u32,
    step_offset: u64,
}

struct PhaseResult {
    saved: Vec<SavedPolicy>,
    scores: Vec<CheckpointScore>,
    stats: RolloutStats,
}

struct LearnerRngs {
    sample: StreamRng,
    update: StreamRng,
}

impl LearnerRngs {
    fn new(seed: u64) -> Self {
        Self {
            sample: stream_rng(seed, stream::SAMPLE),
            update: stream_rng(seed, stream::UPDATE),
        }
    }
}

enum Source {
    Inline {
        worker: WorkerState,
        tickets: u64,
        random_steps: u64,
        pending: Vec<EpisodeRecord>,
    },
    Pool {
        pool: WorkerPool,
        publish_every: u64,
    },
}

impl Source {
    fn next(&mut self, agent: &Agent<f32>, role: Role, processed: u64) -> Result<Transition> {
        match self {
            Source::Inline {
                worker,
                tickets,
                random_steps,
                pending,
            } => {
                let policy = agent.acting_policy(role)?;
                loop {
                    let random = *tickets < *random_steps;
                    *tickets += 1;
                    let (t, rec) = worker.step(&policy, processed, random)?;
                    pending.extend(rec);
                    if let Some(t) = t {
                        return Ok(t);
                    }
                }
            }
            Source::Pool { pool, .. } => pool.next_transition(),
        }
    }

    fn processed(&mut self, agent: &Agent<f32>, role: Role, processed: u64) -> Result<()> {
        if let Source::Pool {
            pool,
            publish_every,
        } = self
        {
            if processed % *publish_every == 0 {
                pool.publish(agent.acting_policy(role)?);
            }
            pool.mark_processed(processed);
        }
        Ok(())
    }

    fn episodes(&mut self) -> Vec<EpisodeRecord> {
        match self {
            Source::Inline { pending, .. } => std::mem::take(pending),
            Source::Pool { pool, .. } => pool.drain_episodes(),
        }
    }

    fn finish(self, processed: u64) -> Result<RolloutStats> {
        match self {
            Source::Inline { .. } => Ok(RolloutStats {
                produced: processed,
                dropped: 0,
                left_in_queue: 0,
                snapshot_version: processed,
            }),
            Source::Pool { pool, .. } => pool.shutdown(),
        }
    }
}

fn pool_config(cfg: &RunConfig, plan: &PhasePlan) -> PoolConfig {
    let r = &cfg.rollout;
    let det = r.deterministic;
    PoolConfig {
        workers: cfg.effective_workers(),
        first_id: plan.first_worker,
        seed: cfg.run.seed,
        history_len: cfg.hyper.history_len,
        snapshot_cadence: if det { 1 } else { r.snapshot_cadence },
        queue_bound: if det { 0 } else { r.queue_bound },
        max_lead: if det { 1 } else { r.max_lead },
        random_steps: plan.random_steps,
        limit: None,
    }
}

/// Full checkpoint of the agent's current state.
pub fn agent_checkpoint(agent: &Agent<f32>, cfg: &RunConfig, step: u64, kind: &str) -> Checkpoint<f32> {
    let mut c = Checkpoint::new(step);
    let d = &agent.dims;
    let meta = [
        ("kind", kind.to_string()),
        ("method", agent.method.name().to_string()),
        ("env", cfg.run.env.clone()),
        ("dynamics_factor", cfg.env.dynamics_factor.to_string()),
        ("seed", cfg.run.seed.to_string()),
        ("history_len", d.history_len.to_string()),
        ("width", d.width.to_string()),
        ("latent", d.latent.to_string()),
        ("history_embed", d.history_embed.to_string()),
        ("conv_channels", d.conv_channels.to_string()),
        ("quantiles", agent.hyper.quantiles.to_string()),
    ];
    c.meta = meta.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    c.sets.push(("actor".into(), agent.actor.clone()));
    if let Some(a) = &agent.adapter {
        c.sets.push(("adapter".into(), a.clone()));
    }
    if kind != "intermediate" {
        for (i, p) in agent.critics.iter().enumerate() {
            c.sets.push((format!("critic{i}"), p.clone()));
        }
        for (i, p) in agent.targets.iter().enumerate() {
            c.sets.push((format!("target{i}"), p.clone()));
        }
    }
    c
}

#[allow(clippy::too_many_arguments)]
fn run_phase(
    agent: &mut Agent<f32>,
    cfg: &RunConfig,
    env: &EnvConfig,
    spec: &ContextSpec,
    plan: &PhasePlan,
    exec: Exec,
    rngs: &mut LearnerRngs,
    rec: &mut dyn Recorder,
) -> Result<PhaseResult> {
    let h = cfg.hyper.history_len;
    let b = cfg.hyper.batch_size;
    let mut source = match exec {
        Exec::Inline => Source::Inline {
            worker: WorkerState::new(plan.first_worker, cfg.run.seed, env, spec, h),
            tickets: 0,
            random_steps: plan.random_steps,
            pending: Vec::new(),
        },
        Exec::Threaded => Source::Pool {
            pool: WorkerPool::spawn(
                &pool_config(cfg, plan),
                env,
                spec,
                agent.acting_policy(plan.rollout)?,
            )?,
            publish_every: if cfg.rollout.deterministic {
                1
            } else {
                cfg.rollout.publish_every
            },
        },
    };
    let mut buffer = ReplayBuffer::new(cfg.run.replay_capacity);
    let mut processed = 0u64;
    let mut updates = 0u64;
    let mut saved = Vec::new();
    let mut scores = Vec::new();
    while updates < plan.updates {
        let t = source.next(agent, plan.rollout, processed)?;
        buffer.push(t);
        processed += 1;
        if buffer.pushed() >= plan.learning_starts && buffer.len() >= b {
            let items = buffer.sample(b, &mut rngs.sample)?;
            let batch: Batch<f32> = Batch::from_transitions(&items, h)?;
            updates += 1;
            let step = plan.step_offset + updates;
            let record = if plan.regression_only {
                let (loss, skipped) = match agent.adapter_regression(&batch) {
                    Ok(l) => (Some(l), false),
                    Err(sparc_core::Error::Training(_)) => (None, true),
                    Err(e) => return Err(e.into()),
                };
                StepRecord {
                    step,
                    phase: plan.label,
                    critic_loss: None,
                    actor_loss: None,
                    adapter_loss: loss,
                    entropy: None,
                    buffer_size: buffer.len(),
                    skipped,
                }
            } else {
                let r = agent.update_step(&batch, &mut rngs.update)?;
                StepRecord {
                    step,
                    phase: plan.label,
                    critic_loss: (!r.skipped).then_some(r.critic_loss),
                    actor_loss: (!r.skipped).then_some(r.actor_loss),
                    adapter_loss: r.adapter_loss,
                    entropy: (!r.skipped).then_some(r.entropy),
                    buffer_size: buffer.len(),
                    skipped: r.skipped,
                }
            };
            if updates % cfg.run.log_every == 0 || updates == plan.updates {
                rec.step(&record)?;
            }
            if updates % cfg.run.eval_every == 0 || updates == plan.updates {
                let policy = agent.acting_policy(plan.eval)?;
                let metrics = checkpoint_metrics(
                    &policy,
                    env,
                    spec,
                    &cfg.eval.checkpoint_seeds,
                    policy.net.uses_context(),
                )?;
                let score = CheckpointScore { id: step, metrics };
                rec.checkpoint(&agent_checkpoint(agent, cfg, step, "intermediate"), &score)?;
                saved.push(SavedPolicy {
                    id: step,
                    actor: agent.actor.clone(),
                    adapter: agent.adapter.clone(),
                });
                scores.push(score);
            }
        }
        if updates < plan.updates {
            source.processed(agent, plan.rollout, processed)?;
        }
        for ep in source.episodes() {
            rec.episode(&ep)?;
        }
    }
    let stats = source.finish(processed)?;
    Ok(PhaseResult {
        saved,
        scores,
        stats,
    })
}

fn select(saved: &[SavedPolicy], scores: &[CheckpointScore]) -> Result<SavedPolicy> {
    let id = pareto_select(scores).ok_or_else(|| LabError::runtime("no checkpoint to select"))?;
    Ok(saved
        .iter()
        .find(|s| s.id == id)
        .expect("every score has a saved policy")
        .clone())
}

fn load_saved(agent: &mut Agent<f32>, s: &SavedPolicy) {
    agent.actor = s.actor.clone();
    agent.adapter = s.adapter.clone();
}

/// Trains `cfg`'s method and returns the agent at its selected checkpoint.
pub fn train(cfg: &RunConfig, exec: Exec, rec: &mut dyn Recorder) -> Result<TrainOutcome> {
    cfg.validate()?;
    let method = cfg.method()?;
    let env = cfg.env_config()?;
    let spec = cfg.context_spec()?;
    let mut agent = Agent::<f32>::new(method, cfg.dims()?, cfg.hyper(), cfg.run.seed)?;
    let mut rngs = LearnerRngs::new(cfg.run.seed);
    if method == Method::Rma {
        let (p1, p2) = rma_budget(cfg);
        let phase1 = rma_phase1(&mut agent, cfg, &env, &spec, p1, exec, &mut rngs, rec)?;
        let theta = select(&phase1.saved, &phase1.scores)?;
        let phase2 = rma_phase2_inner(
            &mut agent,
            cfg,
            &env,
            &spec,
            Some(&theta.actor),
            p2,
            p1,
            exec,
            &mut rngs,
            rec,
        )?;
        let chosen = select(&phase2.saved, &phase2.scores)?;
        load_saved(&mut agent, &chosen);
        rec.selected(&agent_checkpoint(&agent, cfg, chosen.id, "selected"))?;
        let mut scores = phase1.scores;
        scores.extend(phase2.scores);
        return Ok(TrainOutcome {
            agent,
            scores,
            selected: chosen.id,
            theta_star: Some(theta.id),
            rollout: vec![phase1.stats, phase2.stats],
            updates: p1 + p2,
        });
    }
    let plan = PhasePlan {
        label: "train",
        rollout: cfg.rollout_role()?,
        eval: agent.deploy_role(),
        updates: cfg.run.total_updates,
        regression_only: false,
        learning_starts: cfg.learning_starts(),
        random_steps: cfg.run.warmup_steps,
        first_worker: 0,
        step_offset: 0,
    };
    let phase = run_phase(&mut agent, cfg, &env, &spec, &plan, exec, &mut rngs, rec)?;
    let chosen = select(&phase.saved, &phase.scores)?;
    load_saved(&mut agent, &chosen);
    rec.selected(&agent_checkpoint(&agent, cfg, chosen.id, "selected"))?;
    Ok(TrainOutcome {
        agent,
        scores: phase.scores,
        selected: chosen.id,
        theta_star: None,
        rollout: vec![phase.stats],
        updates: cfg.run.total_updates,
    })
}

/// Phase-1 and phase-2 update budgets of RMA.
pub fn rma_budget(cfg: &RunConfig) -> (u64, u64) {
    let total = cfg.run.total_updates;
    if total < 2 {
        return (total, 0);
    }
    let p1 = ((total as f64) * cfg.run.rma_phase1_fraction).round() as u64;
    let p1 = p1.clamp(1, total - 1);
    (p1, total - p1)
}

#[allow(clippy::too_many_arguments)]
fn rma_phase1(
    agent: &mut Agent<f32>,
    cfg: &RunConfig,
    env: &EnvConfig,
    spec: &ContextSpec,
    updates: u64,
    exec: Exec,
    rngs: &mut LearnerRngs,
    rec: &mut dyn Recorder,
) -> Result<PhaseResult> {
    let plan = PhasePlan {
        label: "phase1",
        rollout: Role::Actor,
        eval: Role::Actor,
        updates,
        regression_only: false,
        learning_starts: cfg.learning_starts(),
        random_steps: cfg.run.warmup_steps,
        first_worker: 0,
        step_offset: 0,
    };
    run_phase(agent, cfg, env, spec, &plan, exec, rngs, rec)
}

/// Worker ids of RMA phase 2 start here, so its streams are fresh.
pub const PHASE2_FIRST_WORKER: u32 = 1 << 10;

#[allow(clippy::too_many_arguments)]
fn rma_phase2_inner(
    agent: &mut Agent<f32>,
    cfg: &RunConfig,
    env: &EnvConfig,
    spec: &ContextSpec,
    theta_star: Option<&ParameterSet<f32>>,
    updates: u64,
    step_offset: u64,
    exec: Exec,
    rngs: &mut LearnerRngs,
    rec: &mut dyn Recorder,
) -> Result<PhaseResult> {
    let theta = theta_star
        .ok_or_else(|| LabError::config("RMA phase 2 needs a selected phase-1 checkpoint"))?;
    if agent.method != Method::Rma {
        return Err(LabError::config("phase 2 applies to rma only"));
    }
    agent.actor = theta.clone();
    agent.sync_adapter()?;
    let plan = PhasePlan {
        label: "phase2",
        rollout: Role::Adapter,
        eval: Role::Adapter,
        updates,
        regression_only: true,
        learning_starts: cfg.hyper.batch_size as u64,
        random_steps: 0,
        first_worker: PHASE2_FIRST_WORKER,
        step_offset,
    };
    run_phase(agent, cfg, env, spec, &plan, exec, rngs, rec)
}

/// Runs only RMA phase 1 for `updates` updates; returns the agent as trained
/// (no selection).
pub fn run_rma_phase1(cfg: &RunConfig, updates: u64, exec: Exec, rec: &mut dyn Recorder) -> Result<Agent<f32>> {
    cfg.validate()?;
    if cfg.method()? != Method::Rma {
        return Err(LabError::config("run.method must be rma"));
    }
    let mut agent = Agent::<f32>::new(Method::Rma, cfg.dims()?, cfg.hyper(), cfg.run.seed)?;
    let mut rngs = LearnerRngs::new(cfg.run.seed);
    rma_phase1(
        &mut agent,
        cfg,
        &cfg.env_config()?,
        &cfg.context_spec()?,
        updates,
        exec,
        &mut rngs,
        rec,
    )?;
    Ok(agent)
}

/// Runs RMA phase 2 on `agent` with `theta_star` frozen as the expert.
pub fn run_rma_phase2(
    agent: &mut Agent<f32>,
    cfg: &RunConfig,
    theta_star: Option<&ParameterSet<f32>>,
    updates: u64,
    exec: Exec,
    rec: &mut dyn Recorder,
) -> Result<()> {
    cfg.validate()?;
    let mut rngs = LearnerRngs::new(cfg.run.seed);
    rma_phase2_inner(
        agent,
        cfg,
        &cfg.env_config()?,
        &cfg.context_spec()?,
        theta_star,
        updates,
        0,
        exec,
        &mut rngs,
        rec,
    )?;
    Ok(())
}

/// Runs the single learning phase of a non-RMA method without selection and
/// returns the agent as trained.
pub fn run_single_phase(cfg: &RunConfig, exec: Exec, rec: &mut dyn Recorder) -> Result<(Agent<f32>, RolloutStats)> {
    cfg.validate()?;
    let method = cfg.method()?;
    if method == Method::Rma {
        return Err(LabError::config("rma trains in two phases"));
    }
    let env = cfg.env_config()?;
    let spec = cfg.context_spec()?;
    let mut agent = Agent::<f32>::new(method, cfg.dims()?, cfg.hyper(), cfg.run.seed)?;
    let mut rngs = LearnerRngs::new(cfg.run.seed);
    let plan = PhasePlan {
        label: "train",
        rollout: cfg.rollout_role()?,
        eval: agent.deploy_role(),
        updates: cfg.run.total_updates,
        regression_only: false,
        learning_starts: cfg.learning_starts(),
        random_steps: cfg.run.warmup_steps,
        first_worker: 0,
        step_offset: 0,
    };
    let phase = run_phase(&mut agent, cfg, &env, &spec, &plan, exec, &mut rngs, rec)?;
    Ok((agent, phase.stats))
}
