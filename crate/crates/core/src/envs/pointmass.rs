//! Wind-perturbed planar point mass.
//!
//! Semi-implicit Euler on `x'' = a * F_max / m - drag * x' + wind`, with the
//! drag applied as a per-step decay factor so that, with no force and no wind,
//! `v' = (1 - drag) * v` exactly.

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::{Rng, SeedableRng};

use crate::envs::context::Context;
use crate::envs::{Outcome, StepResult};
use crate::error::{Error, Result};
use crate::rng::Rng as StreamRng;

#[derive(Debug, Clone, PartialEq)]
pub struct PointMassConfig {
    /// Integration step in seconds.
    pub dt: f64,
    /// Per-step velocity decay factor.
    pub drag: f64,
    pub force_max: f64,
    pub mass: f64,
    pub horizon: usize,
    pub goal: [f64; 2],
    pub spawn_center: [f64; 2],
    pub spawn_radius: f64,
    pub goal_radius: f64,
    /// Reward per second spent inside `goal_radius`.
    pub goal_bonus: f64,
    /// Leaving this distance from the goal ends the episode as a failure.
    pub arena_radius: f64,
    /// IND wind half-width per axis; evaluation uses twice this.
    pub wind_half_width: f64,
}

impl Default for PointMassConfig {
    fn default() -> Self {
        Self {
            dt: 0.05,
            drag: 0.05,
            force_max: 4.0,
            mass: 1.0,
            horizon: 400,
            goal: [0.0, 0.0],
            spawn_center: [-2.0, 0.0],
            spawn_radius: 0.5,
            goal_radius: 0.25,
            goal_bonus: 1.0,
            arena_radius: 8.0,
            wind_half_width: 1.5,
        }
    }
}

impl PointMassConfig {
    /// Harder physics: drag scaled by `factor`, actuator force divided by it.
    pub fn perturbed(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.drag = (self.drag * factor).min(0.99);
        out.force_max = self.force_max / factor;
        out
    }
}

pub const OBS_DIM: usize = 4;
pub const ACTION_DIM: usize = 2;
const POS_SCALE: f64 = 2.0;
const VEL_SCALE: f64 = 2.0;

#[derive(Debug, Clone)]
pub struct WindyPointMass {
    pub cfg: PointMassConfig,
    pos: [f64; 2],
    vel: [f64; 2],
    wind: [f64; 2],
    steps: usize,
}

impl WindyPointMass {
    pub fn new(cfg: PointMassConfig) -> Self {
        Self {
            cfg,
            pos: [0.0; 2],
            vel: [0.0; 2],
            wind: [0.0; 2],
            steps: 0,
        }
    }

    pub fn position(&self) -> [f64; 2] {
        self.pos
    }

    pub fn velocity(&self) -> [f64; 2] {
        self.vel
    }

    pub fn set_state(&mut self, pos: [f64; 2], vel: [f64; 2]) {
        self.pos = pos;
        self.vel = vel;
    }

    pub fn elapsed(&self) -> usize {
        self.steps
    }

    fn distance(&self) -> f64 {
        let dx = self.pos[0] - self.cfg.goal[0];
        let dz = self.pos[1] - self.cfg.goal[1];
        (dx * dx + dz * dz).sqrt()
    }

    pub fn observe(&self) -> [f64; OBS_DIM] {
        [
            (self.cfg.goal[0] - self.pos[0]) / POS_SCALE,
            (self.cfg.goal[1] - self.pos[1]) / POS_SCALE,
            self.vel[0] / VEL_SCALE,
            self.vel[1] / VEL_SCALE,
        ]
    }

    pub fn reset(&mut self, ctx: &Context, seed: u64) -> [f64; OBS_DIM] {
        let mut rng = StreamRng::seed_from_u64(seed);
        let r = self.cfg.spawn_radius * rng.random::<f64>().sqrt();
        let theta = core::f64::consts::TAU * rng.random::<f64>();
        let (s, c) = num_traits::Float::sin_cos(theta);
        self.pos = [
            self.cfg.spawn_center[0] + r * c,
            self.cfg.spawn_center[1] + r * s,
        ];
        self.vel = [0.0; 2];
        self.wind = [
            ctx.values.first().copied().unwrap_or(0.0),
            ctx.values.get(1).copied().unwrap_or(0.0),
        ];
        self.steps = 0;
        self.observe()
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if action.len() != ACTION_DIM || action.iter().any(|a| !a.is_finite()) {
            return Err(Error::Training("non-finite or misshaped action".into()));
        }
        let cfg = &self.cfg;
        for k in 0..2 {
            let a = action[k].clamp(-1.0, 1.0);
            let acc = a * cfg.force_max / cfg.mass + self.wind[k];
            self.vel[k] = (1.0 - cfg.drag) * self.vel[k] + cfg.dt * acc;
            self.pos[k] += cfg.dt * self.vel[k];
        }
        self.steps += 1;
        let dist = self.distance();
        let mut reward = -dist * cfg.dt;
        if dist < cfg.goal_radius {
            reward += cfg.goal_bonus * cfg.dt;
        }
        let outcome = if dist > cfg.arena_radius || !dist.is_finite() {
            Outcome::Failure
        } else if self.steps >= cfg.horizon {
            if dist < cfg.goal_radius {
                Outcome::Success
            } else {
                Outcome::Timeout
            }
        } else {
            Outcome::Running
        };
        Ok(StepResult {
            obs: self.observe().to_vec(),
            reward,
            outcome,
            terminal: outcome == Outcome::Failure,
        })
    }
}

/// PD steering toward the goal that ignores the wind.
pub fn scripted_action(obs: &[f64]) -> [f64; ACTION_DIM] {
    const KP: f64 = 2.0;
    const KD: f64 = 1.0;
    let mut out = [0.0; ACTION_DIM];
    for k in 0..2 {
        let err = obs[k] * POS_SCALE;
        let vel = obs[2 + k] * VEL_SCALE;
        out[k] = (KP * err - KD * vel).clamp(-1.0, 1.0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn calm() -> Context {
        Context::new(vec![0.0, 0.0])
    }

    #[test]
    fn drag_decay_is_exact() {
        let mut env = WindyPointMass::new(PointMassConfig::default());
        env.reset(&calm(), 1);
        env.set_state([1.0, 1.0], [0.8, -0.4]);
        env.step(&[0.0, 0.0]).unwrap();
        let v = env.velocity();
        assert_eq!(v[0], (1.0 - 0.05) * 0.8);
        assert_eq!(v[1], (1.0 - 0.05) * -0.4);
    }

    #[test]
    fn spawn_stays_in_disk() {
        let cfg = PointMassConfig::default();
        let mut env = WindyPointMass::new(cfg.clone());
        for seed in 0..10_000 {
            env.reset(&calm(), seed);
            let p = env.position();
            let dx = p[0] - cfg.spawn_center[0];
            let dz = p[1] - cfg.spawn_center[1];
            assert!((dx * dx + dz * dz).sqrt() <= cfg.spawn_radius + 1e-12);
        }
    }

    #[test]
    fn reset_is_deterministic() {
        let mut a = WindyPointMass::new(PointMassConfig::default());
        let mut b = WindyPointMass::new(PointMassConfig::default());
        assert_eq!(a.reset(&calm(), 7), b.reset(&calm(), 7));
    }

    #[test]
    fn horizon_terminates() {
        let mut env = WindyPointMass::new(PointMassConfig::default());
        let mut obs = env.reset(&calm(), 3).to_vec();
        let mut steps = 0;
        loop {
            let a = scripted_action(&obs);
            let r = env.step(&a).unwrap();
            steps += 1;
            obs = r.obs;
            if r.outcome.is_done() {
                break;
            }
        }
        assert_eq!(steps, 400);
    }

    #[test]
    fn scripted_is_zero_at_goal() {
        assert_eq!(scripted_action(&[0.0, 0.0, 0.0, 0.0]), [0.0, 0.0]);
    }

    #[test]
    fn rejects_nan_action() {
        let mut env = WindyPointMass::new(PointMassConfig::default());
        env.reset(&calm(), 0);
        assert!(env.step(&[f64::NAN, 0.0]).is_err());
    }
}
