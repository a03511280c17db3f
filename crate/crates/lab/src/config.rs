//! Run configuration: one TOML document with a section per module.
//!
//! Every field has a default, so an empty file is a valid SPARC run on the
//! windy point mass. `[hyper]` carries the learner hyperparameters.

use serde::{Deserialize, Serialize};
use sparc_core::agent::{Hyper, Method, Role};
use sparc_core::envs::{ContextSpec, EnvConfig, EnvKind};
use sparc_core::policy::PolicyDims;

use crate::error::{LabError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub hyper: HyperSection,
    pub net: NetSection,
    pub rollout: RolloutSection,
    pub eval: EvalSection,
    pub env: EnvSection,
    /// Present when a manifest is fed back in as a config; ignored.
    #[serde(skip_serializing)]
    pub manifest: Option<toml::Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RolloutPolicy {
    Adapter,
    Expert,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub name: String,
    pub method: String,
    pub env: String,
    pub seed: u64,
    pub total_updates: u64,
    pub rollout_policy: RolloutPolicy,
    /// Env steps with uniform random actions before the first update.
    pub warmup_steps: u64,
    pub replay_capacity: usize,
    /// Checkpoint and evaluate every this many updates.
    pub eval_every: u64,
    /// Write one train.jsonl line every this many updates.
    pub log_every: u64,
    /// Share of `total_updates` spent in RMA phase 1.
    pub rma_phase1_fraction: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            name: "default".into(),
            method: "sparc".into(),
            env: "windy_pointmass".into(),
            seed: 0,
            total_updates: 100_000,
            rollout_policy: RolloutPolicy::Adapter,
            warmup_steps: 1000,
            replay_capacity: 1_000_000,
            eval_every: 5000,
            log_every: 1,
            rma_phase1_fraction: 2.0 / 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperSection {
    pub batch_size: usize,
    pub history_len: usize,
    pub lr_adapter: f64,
    pub lr_sac: f64,
    pub tau: f64,
    pub critic_clip: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub quantiles: usize,
    pub kappa: f64,
    pub copy_every: u64,
}

impl Default for HyperSection {
    fn default() -> Self {
        let h = Hyper::default();
        Self {
            batch_size: h.batch_size,
            history_len: h.history_len,
            lr_adapter: h.lr_adapter,
            lr_sac: h.lr_sac,
            tau: h.tau,
            critic_clip: h.critic_clip,
            gamma: h.gamma,
            alpha: h.alpha,
            quantiles: h.quantiles,
            kappa: h.kappa,
            copy_every: h.copy_every,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSection {
    pub width: usize,
    pub latent: usize,
    pub history_embed: usize,
    pub conv_channels: usize,
}

impl Default for NetSection {
    fn default() -> Self {
        let d = PolicyDims::desk(1, 1, 1, 1);
        Self {
            width: d.width,
            latent: d.latent,
            history_embed: d.history_embed,
            conv_channels: d.conv_channels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutSection {
    pub workers: usize,
    /// Workers refresh their parameter snapshot every this many env steps.
    pub snapshot_cadence: u64,
    /// The learner publishes a snapshot every this many processed transitions.
    pub publish_every: u64,
    /// Transition queue bound; 0 means unbounded.
    pub queue_bound: usize,
    /// Workers pause while this many produced transitions are unprocessed;
    /// 0 disables pacing.
    pub max_lead: u64,
    /// Single worker in lockstep with the learner: bitwise reproducible.
    pub deterministic: bool,
}

impl Default for RolloutSection {
    fn default() -> Self {
        Self {
            workers: 4,
            snapshot_cadence: 200,
            publish_every: 50,
            queue_bound: 100_000,
            max_lead: 256,
            deterministic: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub grid_resolution: usize,
    /// Episode seeds per grid cell.
    pub seeds: Vec<u64>,
    /// Episode seeds per checkpoint evaluation setting.
    pub checkpoint_seeds: Vec<u64>,
    /// Threads for grid evaluation; 0 means one per available core.
    pub threads: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            grid_resolution: 21,
            seeds: vec![0, 1, 2],
            checkpoint_seeds: vec![0],
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    /// Drag multiplier (and actuator divisor) applied to the default constants.
    pub dynamics_factor: f64,
}

impl Default for EnvSection {
    fn default() -> Self {
        Self {
            dynamics_factor: 1.0,
        }
    }
}

fn field(path: &str, msg: impl std::fmt::Display) -> LabError {
    LabError::config(format!("{path}: {msg}"))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| LabError::config(e.message()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies `section.key=value` overrides; values parse as TOML scalars
    /// and fall back to plain strings.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut doc = toml::Value::try_from(self).expect("config serializes");
        for item in overrides {
            let (path, raw) = item
                .split_once('=')
                .ok_or_else(|| LabError::config(format!("override `{item}` is not key=value")))?;
            let (section, key) = path
                .trim()
                .split_once('.')
                .ok_or_else(|| field(path, "expected section.key"))?;
            let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
            let table = doc
                .get_mut(section)
                .and_then(|s| s.as_table_mut())
                .ok_or_else(|| field(path, "unknown section"))?;
            if !table.contains_key(key) {
                return Err(field(path, "unknown key"));
            }
            table.insert(key.to_string(), value);
        }
        let cfg: RunConfig = doc
            .try_into()
            .map_err(|e: toml::de::Error| LabError::config(e.message()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let method = self.method()?;
        self.env_kind()?;
        let (r, h, n, ro, e) = (&self.run, &self.hyper, &self.net, &self.rollout, &self.eval);
        if r.name.is_empty() || r.name.contains(['/', '\\']) {
            return Err(field("run.name", "must be a non-empty plain name"));
        }
        if r.total_updates == 0 {
            return Err(field("run.total_updates", "must be positive"));
        }
        if r.eval_every == 0 {
            return Err(field("run.eval_every", "must be positive"));
        }
        if r.log_every == 0 {
            return Err(field("run.log_every", "must be positive"));
        }
        if r.replay_capacity < h.batch_size {
            return Err(field("run.replay_capacity", "must hold at least one batch"));
        }
        if !(r.rma_phase1_fraction > 0.0 && r.rma_phase1_fraction < 1.0) {
            return Err(field("run.rma_phase1_fraction", "must lie in (0, 1)"));
        }
        if r.rollout_policy == RolloutPolicy::Expert && !matches!(method, Method::Sparc | Method::Rma)
        {
            return Err(field(
                "run.rollout_policy",
                format!("`expert` only applies to sparc and rma, not {}", method.name()),
            ));
        }
        if h.batch_size == 0 {
            return Err(field("hyper.batch_size", "must be positive"));
        }
        if h.history_len == 0 {
            return Err(field("hyper.history_len", "must be at least 1"));
        }
        if h.quantiles == 0 {
            return Err(field("hyper.quantiles", "must be positive"));
        }
        if h.copy_every == 0 {
            return Err(field("hyper.copy_every", "must be positive"));
        }
        for (name, v) in [("hyper.lr_adapter", h.lr_adapter), ("hyper.lr_sac", h.lr_sac)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(field(name, "must be finite and non-negative"));
            }
        }
        if !(0.0..=1.0).contains(&h.tau) {
            return Err(field("hyper.tau", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&h.gamma) {
            return Err(field("hyper.gamma", "must lie in [0, 1]"));
        }
        if !(h.alpha >= 0.0 && h.alpha.is_finite()) {
            return Err(field("hyper.alpha", "must be finite and non-negative"));
        }
        if !(h.kappa > 0.0 && h.critic_clip > 0.0) {
            return Err(field("hyper.kappa", "kappa and critic_clip must be positive"));
        }
        for (name, v) in [
            ("net.width", n.width),
            ("net.latent", n.latent),
            ("net.history_embed", n.history_embed),
            ("net.conv_channels", n.conv_channels),
        ] {
            if v == 0 {
                return Err(field(name, "must be positive"));
            }
        }
        if ro.workers == 0 {
            return Err(field("rollout.workers", "must be at least 1"));
        }
        if ro.snapshot_cadence == 0 || ro.publish_every == 0 {
            return Err(field("rollout.snapshot_cadence", "cadences must be positive"));
        }
        if e.grid_resolution < 2 {
            return Err(field("eval.grid_resolution", "must be at least 2"));
        }
        if e.seeds.is_empty() {
            return Err(field("eval.seeds", "need at least one episode seed"));
        }
        if e.checkpoint_seeds.is_empty() {
            return Err(field("eval.checkpoint_seeds", "need at least one episode seed"));
        }
        if !(self.env.dynamics_factor > 0.0 && self.env.dynamics_factor.is_finite()) {
            return Err(field("env.dynamics_factor", "must be positive"));
        }
        Ok(())
    }

    pub fn method(&self) -> Result<Method> {
        Method::parse(&self.run.method).ok_or_else(|| {
            let names: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
            field("run.method", format!("`{}` is not one of {names:?}", self.run.method))
        })
    }

    pub fn env_kind(&self) -> Result<EnvKind> {
        EnvKind::parse(&self.run.env).ok_or_else(|| {
            field(
                "run.env",
                format!("`{}` is not windy_pointmass or linear_racer", self.run.env),
            )
        })
    }

    pub fn env_config(&self) -> Result<EnvConfig> {
        let base = EnvConfig::default_for(self.env_kind()?);
        Ok(if self.env.dynamics_factor == 1.0 {
            base
        } else {
            base.perturbed(self.env.dynamics_factor)
        })
    }

    pub fn context_spec(&self) -> Result<ContextSpec> {
        Ok(self
            .env_config()?
            .default_context_spec(self.eval.grid_resolution)?)
    }

    pub fn hyper(&self) -> Hyper {
        let h = &self.hyper;
        Hyper {
            batch_size: h.batch_size,
            history_len: h.history_len,
            lr_adapter: h.lr_adapter,
            lr_sac: h.lr_sac,
            tau: h.tau,
            critic_clip: h.critic_clip,
            gamma: h.gamma,
            alpha: h.alpha,
            quantiles: h.quantiles,
            kappa: h.kappa,
            copy_every: h.copy_every,
        }
    }

    pub fn dims(&self) -> Result<PolicyDims> {
        let kind = self.env_kind()?;
        let spec = self.context_spec()?;
        Ok(PolicyDims {
            obs: kind.obs_dim(),
            action: kind.action_dim(),
            context: spec.dim(),
            history_len: self.hyper.history_len,
            width: self.net.width,
            latent: self.net.latent,
            history_embed: self.net.history_embed,
            conv_channels: self.net.conv_channels,
        })
    }

    /// Role of the policy that collects experience.
    pub fn rollout_role(&self) -> Result<Role> {
        let method = self.method()?;
        Ok(match (method, self.run.rollout_policy) {
            (Method::Sparc, RolloutPolicy::Adapter) => Role::Adapter,
            _ => Role::Actor,
        })
    }

    /// Worker count after the deterministic switch and the `SPARC_THREADS` cap.
    pub fn effective_workers(&self) -> usize {
        if self.rollout.deterministic {
            return 1;
        }
        let cap = std::env::var("SPARC_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&v| v > 0);
        match cap {
            Some(c) => self.rollout.workers.min(c),
            None => self.rollout.workers,
        }
    }

    /// Updates begin once this many transitions have been stored.
    pub fn learning_starts(&self) -> u64 {
        self.run.warmup_steps.max(self.hyper.batch_size as u64)
    }
}
