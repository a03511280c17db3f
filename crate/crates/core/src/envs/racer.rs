//! One-dimensional racer with piecewise speed limits.
//!
//! `v' = throttle * P * power / (m * mass * max(v, v_floor)) - c_d * v^2` for
//! positive throttle; negative throttle brakes with a fixed force, i.e. a
//! deceleration of `brake / mass`. Driving more than 20% over the local limit
//! for more than 10 consecutive steps fails the lap.

use alloc::vec;
use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use rand::{Rng, SeedableRng};

use crate::envs::context::Context;
use crate::envs::{Outcome, StepResult};
use crate::error::{Error, Result};
use crate::rng::Rng as StreamRng;

#[derive(Debug, Clone, PartialEq)]
pub struct RacerConfig {
    pub dt: f64,
    /// Engine power per unit nominal mass.
    pub power: f64,
    pub mass: f64,
    pub v_floor: f64,
    pub drag_coeff: f64,
    /// Deceleration at full brake for the nominal mass.
    pub brake: f64,
    pub horizon: usize,
    /// `(segment end position, speed limit)`, in track order.
    pub segments: Vec<(f64, f64)>,
    pub initial_speed: (f64, f64),
    pub overspeed_ratio: f64,
    pub overspeed_steps: usize,
    pub violation_penalty: f64,
}

impl Default for RacerConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            power: 300.0,
            mass: 1.0,
            v_floor: 20.0,
            drag_coeff: 8.7e-4,
            brake: 12.0,
            horizon: 1200,
            segments: vec![
                (500.0, 60.0),
                (600.0, 25.0),
                (1100.0, 65.0),
                (1250.0, 30.0),
                (1700.0, 70.0),
                (1800.0, 35.0),
                (2000.0, 60.0),
            ],
            initial_speed: (10.0, 20.0),
            overspeed_ratio: 1.2,
            overspeed_steps: 10,
            violation_penalty: 0.5,
        }
    }
}

impl RacerConfig {
    pub fn track_length(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.0)
    }

    /// Harder physics: drag scaled by `factor`, brakes divided by it.
    pub fn perturbed(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.drag_coeff = self.drag_coeff * factor;
        out.brake = self.brake / factor;
        out
    }

    fn segment_at(&self, x: f64) -> usize {
        self.segments
            .iter()
            .position(|&(end, _)| x < end)
            .unwrap_or(self.segments.len() - 1)
    }
}

pub const OBS_DIM: usize = 6;
pub const ACTION_DIM: usize = 1;
const SPEED_SCALE: f64 = 50.0;
const DIST_SCALE: f64 = 200.0;

#[derive(Debug, Clone)]
pub struct LinearRacer {
    pub cfg: RacerConfig,
    x: f64,
    v: f64,
    power_scale: f64,
    mass_scale: f64,
    over_count: usize,
    steps: usize,
}

impl LinearRacer {
    pub fn new(cfg: RacerConfig) -> Self {
        Self {
            cfg,
            x: 0.0,
            v: 0.0,
            power_scale: 1.0,
            mass_scale: 1.0,
            over_count: 0,
            steps: 0,
        }
    }

    pub fn speed(&self) -> f64 {
        self.v
    }

    pub fn progress(&self) -> f64 {
        self.x
    }

    pub fn elapsed(&self) -> usize {
        self.steps
    }

    pub fn set_speed(&mut self, v: f64) {
        self.v = v;
    }

    /// Acceleration at full throttle ignoring drag, for the current context.
    pub fn propulsive_accel(&self, v: f64) -> f64 {
        self.cfg.power * self.power_scale
            / (self.cfg.mass * self.mass_scale * v.max(self.cfg.v_floor))
    }

    pub fn observe(&self) -> [f64; OBS_DIM] {
        let seg = self.cfg.segment_at(self.x);
        let (end, limit) = self.cfg.segments[seg];
        let next = self.cfg.segments.get(seg + 1).map_or(limit, |s| s.1);
        [
            self.v / SPEED_SCALE,
            limit / SPEED_SCALE,
            next / SPEED_SCALE,
            ((end - self.x) / DIST_SCALE).min(5.0),
            self.x / self.cfg.track_length(),
            self.over_count as f64 / self.cfg.overspeed_steps as f64,
        ]
    }

    pub fn reset(&mut self, ctx: &Context, seed: u64) -> [f64; OBS_DIM] {
        let mut rng = StreamRng::seed_from_u64(seed);
        let (lo, hi) = self.cfg.initial_speed;
        self.v = lo + (hi - lo) * rng.random::<f64>();
        self.x = 0.0;
        self.power_scale = ctx.values.first().copied().unwrap_or(1.0);
        self.mass_scale = ctx.values.get(1).copied().unwrap_or(1.0);
        self.over_count = 0;
        self.steps = 0;
        self.observe()
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if action.len() != ACTION_DIM || !action[0].is_finite() {
            return Err(Error::Training("non-finite or misshaped action".into()));
        }
        let throttle = action[0].clamp(-1.0, 1.0);
        let cfg = &self.cfg;
        let drive = if throttle >= 0.0 {
            throttle * self.propulsive_accel(self.v)
        } else {
            throttle * cfg.brake / self.mass_scale
        };
        let acc = drive - cfg.drag_coeff * self.v * self.v;
        self.v = (self.v + cfg.dt * acc).max(0.0);
        let before = self.x;
        self.x += cfg.dt * self.v;
        self.steps += 1;

        let limit = cfg.segments[cfg.segment_at(before)].1;
        let mut reward = (self.x - before) / DIST_SCALE;
        if self.v > limit {
            reward -= cfg.violation_penalty * (self.v - limit) / limit;
        }
        if self.v > cfg.overspeed_ratio * limit {
            self.over_count += 1;
        } else {
            self.over_count = 0;
        }
        let outcome = if self.over_count > cfg.overspeed_steps {
            Outcome::Failure
        } else if self.x >= cfg.track_length() {
            Outcome::Success
        } else if self.steps >= cfg.horizon {
            Outcome::Timeout
        } else {
            Outcome::Running
        };
        Ok(StepResult {
            obs: self.observe().to_vec(),
            reward,
            outcome,
            terminal: matches!(outcome, Outcome::Failure | Outcome::Success),
        })
    }

    /// Lap time in seconds for an episode that ended in success.
    pub fn lap_time(&self) -> f64 {
        self.steps as f64 * self.cfg.dt
    }
}

/// Speed-limit follower with proportional throttle and brake.
///
/// Targets the lower of the current limit and the speed from which the next
/// limit can still be reached with a conservative braking estimate.
pub fn scripted_action(obs: &[f64], cfg: &RacerConfig) -> [f64; ACTION_DIM] {
    const GAIN: f64 = 0.5;
    const MARGIN: f64 = 0.97;
    // Plans with the brakes of the heaviest car in the widest evaluation range.
    let plan_brake = 0.6 * cfg.brake / 1.5;
    let v = obs[0] * SPEED_SCALE;
    let limit = obs[1] * SPEED_SCALE;
    let next = obs[2] * SPEED_SCALE;
    let dist = obs[3] * DIST_SCALE;
    let reachable = (next * next + 2.0 * plan_brake * dist).sqrt();
    let target = MARGIN * limit.min(reachable);
    [(GAIN * (target - v)).clamp(-1.0, 1.0)]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(p: f64, m: f64) -> Context {
        Context::new(vec![p, m])
    }

    #[test]
    fn full_throttle_accel_scales_with_power_over_mass() {
        let mut base = LinearRacer::new(RacerConfig::default());
        base.reset(&ctx(1.0, 1.0), 0);
        base.set_speed(0.0);
        let mut hot = LinearRacer::new(RacerConfig::default());
        hot.reset(&ctx(1.25, 0.75), 0);
        hot.set_speed(0.0);
        base.step(&[1.0]).unwrap();
        hot.step(&[1.0]).unwrap();
        let a_base = base.speed() / base.cfg.dt;
        let a_hot = hot.speed() / hot.cfg.dt;
        assert!((a_hot - (1.25 / 0.75) * a_base).abs() < 1e-9);
    }

    #[test]
    fn initial_speed_in_range() {
        let mut env = LinearRacer::new(RacerConfig::default());
        for seed in 0..10_000 {
            env.reset(&ctx(1.0, 1.0), seed);
            assert!((10.0..=20.0).contains(&env.speed()));
        }
    }

    #[test]
    fn scripted_full_throttle_below_limit() {
        let cfg = RacerConfig::default();
        let mut env = LinearRacer::new(cfg.clone());
        let obs = env.reset(&ctx(1.0, 1.0), 0);
        assert_eq!(scripted_action(&obs, &cfg), [1.0]);
    }

    #[test]
    fn overspeeding_fails_the_lap() {
        let cfg = RacerConfig::default();
        let mut env = LinearRacer::new(cfg);
        env.reset(&ctx(1.5, 0.5), 0);
        let mut last = Outcome::Running;
        for _ in 0..2000 {
            let r = env.step(&[1.0]).unwrap();
            last = r.outcome;
            if last.is_done() {
                break;
            }
        }
        assert_eq!(last, Outcome::Failure);
    }

    #[test]
    fn idle_car_times_out_at_horizon() {
        let mut env = LinearRacer::new(RacerConfig::default());
        env.reset(&ctx(1.0, 1.0), 0);
        env.set_speed(0.0);
        let mut n = 0;
        loop {
            n += 1;
            if env.step(&[-1.0]).unwrap().outcome.is_done() {
                break;
            }
        }
        assert_eq!(n, 1200);
    }
}
