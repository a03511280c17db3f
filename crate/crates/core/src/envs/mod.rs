//! Contextual environments, context specs and history bookkeeping.

pub mod context;
pub mod history;
pub mod pointmass;
pub mod racer;

use alloc::vec;
use alloc::vec::Vec;

pub use context::{sample_discrete, Context, ContextSpec};
pub use history::{shifted_window, HistoryBuffer};
pub use pointmass::{PointMassConfig, WindyPointMass};
pub use racer::{LinearRacer, RacerConfig};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Running,
    /// Goal held at the horizon, or lap completed.
    Success,
    Failure,
    /// Horizon reached without success.
    Timeout,
}

impl Outcome {
    pub fn is_done(self) -> bool {
        self != Outcome::Running
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub outcome: Outcome,
    /// The value beyond this step is zero. Horizon truncation is not terminal.
    pub terminal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnvKind {
    WindyPointMass,
    LinearRacer,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::WindyPointMass => "windy_pointmass",
            EnvKind::LinearRacer => "linear_racer",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "windy_pointmass" | "pointmass" => Some(EnvKind::WindyPointMass),
            "linear_racer" | "racer" | "power_mass" => Some(EnvKind::LinearRacer),
            _ => None,
        }
    }

    pub fn obs_dim(self) -> usize {
        match self {
            EnvKind::WindyPointMass => pointmass::OBS_DIM,
            EnvKind::LinearRacer => racer::OBS_DIM,
        }
    }

    pub fn action_dim(self) -> usize {
        match self {
            EnvKind::WindyPointMass => pointmass::ACTION_DIM,
            EnvKind::LinearRacer => racer::ACTION_DIM,
        }
    }

    /// Lap time (lower is better) for the racer, return for the point mass.
    pub fn metric_is_time(self) -> bool {
        matches!(self, EnvKind::LinearRacer)
    }
}

/// Environment constants for either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvConfig {
    PointMass(PointMassConfig),
    Racer(RacerConfig),
}

impl EnvConfig {
    pub fn default_for(kind: EnvKind) -> Self {
        match kind {
            EnvKind::WindyPointMass => EnvConfig::PointMass(PointMassConfig::default()),
            EnvKind::LinearRacer => EnvConfig::Racer(RacerConfig::default()),
        }
    }

    pub fn kind(&self) -> EnvKind {
        match self {
            EnvConfig::PointMass(_) => EnvKind::WindyPointMass,
            EnvConfig::Racer(_) => EnvKind::LinearRacer,
        }
    }

    pub fn perturbed(&self, factor: f64) -> Self {
        match self {
            EnvConfig::PointMass(c) => EnvConfig::PointMass(c.perturbed(factor)),
            EnvConfig::Racer(c) => EnvConfig::Racer(c.perturbed(factor)),
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            EnvConfig::PointMass(c) => c.horizon,
            EnvConfig::Racer(c) => c.horizon,
        }
    }

    /// IND/evaluation context ranges: wind `[-w, w]` vs `[-2w, 2w]` per axis,
    /// or power/mass `[0.75, 1.25]` vs `[0.5, 1.5]`.
    pub fn default_context_spec(&self, grid_resolution: usize) -> Result<ContextSpec> {
        match self {
            EnvConfig::PointMass(c) => {
                let w = c.wind_half_width;
                ContextSpec::new(
                    &["wind_x", "wind_z"],
                    vec![(-w, w), (-w, w)],
                    vec![(-2.0 * w, 2.0 * w), (-2.0 * w, 2.0 * w)],
                    grid_resolution,
                )
            }
            EnvConfig::Racer(_) => ContextSpec::new(
                &["power_scale", "mass_scale"],
                vec![(0.75, 1.25), (0.75, 1.25)],
                vec![(0.5, 1.5), (0.5, 1.5)],
                grid_resolution,
            ),
        }
    }

    /// Whether `ctx` describes a physically meaningful environment.
    pub fn context_is_valid(&self, ctx: &Context) -> bool {
        if !ctx.is_finite() || ctx.values.len() != 2 {
            return false;
        }
        match self {
            EnvConfig::PointMass(_) => true,
            EnvConfig::Racer(_) => ctx.values.iter().all(|&v| v > 0.0),
        }
    }

    pub fn build(&self) -> Env {
        match self {
            EnvConfig::PointMass(c) => Env::PointMass(WindyPointMass::new(c.clone())),
            EnvConfig::Racer(c) => Env::Racer(LinearRacer::new(c.clone())),
        }
    }
}

/// A live environment instance.
#[derive(Debug, Clone)]
pub enum Env {
    PointMass(WindyPointMass),
    Racer(LinearRacer),
}

impl Env {
    pub fn kind(&self) -> EnvKind {
        match self {
            Env::PointMass(_) => EnvKind::WindyPointMass,
            Env::Racer(_) => EnvKind::LinearRacer,
        }
    }

    pub fn reset(&mut self, ctx: &Context, seed: u64) -> Vec<f64> {
        match self {
            Env::PointMass(e) => e.reset(ctx, seed).to_vec(),
            Env::Racer(e) => e.reset(ctx, seed).to_vec(),
        }
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        match self {
            Env::PointMass(e) => e.step(action),
            Env::Racer(e) => e.step(action),
        }
    }

    /// Hand-coded reference controller that never sees the context.
    pub fn scripted_action(&self, obs: &[f64]) -> Vec<f64> {
        match self {
            Env::PointMass(_) => pointmass::scripted_action(obs).to_vec(),
            Env::Racer(e) => racer::scripted_action(obs, &e.cfg).to_vec(),
        }
    }

    pub fn lap_time(&self) -> Option<f64> {
        match self {
            Env::Racer(e) => Some(e.lap_time()),
            Env::PointMass(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeStats {
    pub ret: f64,
    pub length: usize,
    pub outcome: Outcome,
    /// Lap time in seconds when the racer finished a lap.
    pub lap_time: Option<f64>,
}

impl EpisodeStats {
    pub fn success(&self) -> bool {
        self.outcome == Outcome::Success
    }
}

/// Runs one episode with `policy(obs, history_window) -> action`.
pub fn run_episode<P>(
    env: &mut Env,
    ctx: &Context,
    seed: u64,
    history: &mut HistoryBuffer,
    mut policy: P,
) -> Result<EpisodeStats>
where
    P: FnMut(&[f64], &HistoryBuffer) -> Result<Vec<f64>>,
{
    let mut obs = env.reset(ctx, seed);
    history.reset();
    let mut ret = 0.0;
    let mut length = 0;
    loop {
        let action = policy(&obs, history)?;
        history.push(&obs, &action);
        let step = env.step(&action)?;
        ret += step.reward;
        length += 1;
        obs = step.obs;
        if step.outcome.is_done() {
            let lap_time = (step.outcome == Outcome::Success)
                .then(|| env.lap_time())
                .flatten();
            return Ok(EpisodeStats {
                ret,
                length,
                outcome: step.outcome,
                lap_time,
            });
        }
    }
}

/// Episode driven by the scripted controller.
pub fn run_scripted(env: &mut Env, ctx: &Context, seed: u64) -> Result<EpisodeStats> {
    let kind = env.kind();
    let mut history = HistoryBuffer::new(1, kind.obs_dim(), kind.action_dim());
    let probe = env.clone();
    run_episode(env, ctx, seed, &mut history, |obs, _| {
        Ok(probe.scripted_action(obs))
    })
}
