//! On-disk run layout: `runs/<name>/<seed>/{manifest.toml, train.jsonl,
//! telemetry.jsonl, checkpoints/, eval/}`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sparc_core::agent::{ActingPolicy, Agent, Method};
use sparc_core::envs::{EnvConfig, EnvKind};
use sparc_core::eval::CheckpointScore;
use sparc_core::nn::Checkpoint;
use sparc_core::policy::PolicyDims;

use crate::config::RunConfig;
use crate::error::{LabError, Result};
use crate::rollout::EpisodeRecord;
use crate::trainer::{Recorder, StepRecord};

pub const CODE_VERSION: &str = concat!("sparc-lab ", env!("CARGO_PKG_VERSION"));

pub fn run_dir(root: &Path, cfg: &RunConfig) -> PathBuf {
    root.join(&cfg.run.name).join(cfg.run.seed.to_string())
}

#[derive(Debug, Serialize)]
struct ManifestSection<'a> {
    seed: u64,
    start_time_unix: u64,
    code_version: &'a str,
    workers: usize,
    layout: [&'a str; 5],
}

/// Manifest text: the resolved config followed by a `[manifest]` table.
/// Loading it as a config ignores the `[manifest]` table.
pub fn manifest_text(cfg: &RunConfig, start_time_unix: u64) -> String {
    let section = ManifestSection {
        seed: cfg.run.seed,
        start_time_unix,
        code_version: CODE_VERSION,
        workers: cfg.effective_workers(),
        layout: [
            "manifest.toml",
            "train.jsonl",
            "telemetry.jsonl",
            "checkpoints/",
            "eval/",
        ],
    };
    let mut wrapper = toml::Table::new();
    wrapper.insert(
        "manifest".into(),
        toml::Value::try_from(section).expect("manifest serializes"),
    );
    format!(
        "{}\n{}",
        cfg.to_toml(),
        toml::to_string(&wrapper).expect("manifest serializes")
    )
}

/// Prepares a run directory. An existing non-empty directory is an error
/// unless `force`, in which case it is cleared.
pub fn prepare_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() && fs::read_dir(dir)?.next().is_some() {
        if !force {
            return Err(LabError::config(format!(
                "{} already exists; pass --force to overwrite",
                dir.display()
            )));
        }
        fs::remove_dir_all(dir)?;
    }
    fs::create_dir_all(dir.join("checkpoints"))?;
    fs::create_dir_all(dir.join("eval"))?;
    Ok(())
}

/// Recorder writing the run layout.
pub struct RunDir {
    pub dir: PathBuf,
    train: BufWriter<File>,
    telemetry: BufWriter<File>,
    scores: BufWriter<File>,
}

impl RunDir {
    /// Creates the layout and writes the manifest before anything else.
    pub fn create(dir: &Path, cfg: &RunConfig, force: bool) -> Result<Self> {
        prepare_dir(dir, force)?;
        let now = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        fs::write(dir.join("manifest.toml"), manifest_text(cfg, now))?;
        let open = |name: &str| -> Result<BufWriter<File>> {
            Ok(BufWriter::new(File::create(dir.join(name))?))
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            train: open("train.jsonl")?,
            telemetry: open("telemetry.jsonl")?,
            scores: open("checkpoints/scores.jsonl")?,
        })
    }

    pub fn flush(&mut self) -> Result<()> {
        self.train.flush()?;
        self.telemetry.flush()?;
        self.scores.flush()?;
        Ok(())
    }
}

fn json_line<T: Serialize>(w: &mut impl Write, v: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, v)?;
    w.write_all(b"\n")?;
    Ok(())
}

#[derive(Serialize)]
struct ScoreLine<'a> {
    id: u64,
    metrics: &'a [f64],
}

impl Recorder for RunDir {
    fn step(&mut self, rec: &StepRecord) -> Result<()> {
        json_line(&mut self.train, rec)
    }

    fn episode(&mut self, rec: &EpisodeRecord) -> Result<()> {
        json_line(&mut self.telemetry, rec)
    }

    fn checkpoint(&mut self, ckpt: &Checkpoint<f32>, score: &CheckpointScore) -> Result<()> {
        fs::write(
            self.dir
                .join("checkpoints")
                .join(format!("step_{:09}.ckpt", ckpt.global_step)),
            ckpt.encode(),
        )?;
        json_line(
            &mut self.scores,
            &ScoreLine {
                id: score.id,
                metrics: &score.metrics,
            },
        )?;
        self.scores.flush()?;
        self.train.flush()?;
        Ok(())
    }

    fn selected(&mut self, ckpt: &Checkpoint<f32>) -> Result<()> {
        fs::write(self.dir.join("checkpoints").join("selected.ckpt"), ckpt.encode())?;
        self.flush()
    }
}

/// A checkpoint turned back into the deployable policy.
#[derive(Debug)]
pub struct LoadedPolicy {
    pub method: Method,
    pub env: EnvConfig,
    pub dynamics_factor: f64,
    pub policy: ActingPolicy<f32>,
    pub step: u64,
}

fn meta<'a>(c: &'a Checkpoint<f32>, key: &str) -> Result<&'a str> {
    c.meta_value(key)
        .ok_or_else(|| LabError::config(format!("checkpoint lacks `{key}`")))
}

fn meta_num<T: std::str::FromStr>(c: &Checkpoint<f32>, key: &str) -> Result<T> {
    meta(c, key)?
        .parse()
        .map_err(|_| LabError::config(format!("checkpoint field `{key}` is malformed")))
}

pub fn load_policy(path: &Path) -> Result<LoadedPolicy> {
    let bytes = fs::read(path).map_err(|e| LabError::config(format!("{}: {e}", path.display())))?;
    let ckpt = Checkpoint::<f32>::decode(&bytes)
        .map_err(|e| LabError::config(format!("{}: {e}", path.display())))?;
    let method = Method::parse(meta(&ckpt, "method")?)
        .ok_or_else(|| LabError::config("checkpoint names an unknown method"))?;
    let kind = EnvKind::parse(meta(&ckpt, "env")?)
        .ok_or_else(|| LabError::config("checkpoint names an unknown env"))?;
    let dynamics_factor: f64 = meta_num(&ckpt, "dynamics_factor")?;
    let base = EnvConfig::default_for(kind);
    let env = if dynamics_factor == 1.0 {
        base.clone()
    } else {
        base.perturbed(dynamics_factor)
    };
    let spec = base.default_context_spec(2)?;
    let history_len: usize = meta_num(&ckpt, "history_len")?;
    let dims = PolicyDims {
        obs: kind.obs_dim(),
        action: kind.action_dim(),
        context: spec.dim(),
        history_len,
        width: meta_num(&ckpt, "width")?,
        latent: meta_num(&ckpt, "latent")?,
        history_embed: meta_num(&ckpt, "history_embed")?,
        conv_channels: meta_num(&ckpt, "conv_channels")?,
    };
    let hyper = sparc_core::agent::Hyper {
        history_len,
        quantiles: meta_num(&ckpt, "quantiles")?,
        ..Default::default()
    };
    let mut agent = Agent::<f32>::new(method, dims, hyper, 0)?;
    let actor = ckpt
        .set("actor")
        .ok_or_else(|| LabError::config("checkpoint has no actor"))?;
    check_same_layout(&agent.actor, actor, "actor")?;
    agent.actor = actor.clone();
    if let Some(own) = &agent.adapter {
        let adapter = ckpt
            .set("adapter")
            .ok_or_else(|| LabError::config("checkpoint has no adapter"))?;
        check_same_layout(own, adapter, "adapter")?;
        agent.adapter = Some(adapter.clone());
    }
    Ok(LoadedPolicy {
        method,
        env,
        dynamics_factor,
        policy: agent.acting_policy(agent.deploy_role())?,
        step: ckpt.global_step,
    })
}

fn check_same_layout(
    expected: &sparc_core::nn::ParameterSet<f32>,
    got: &sparc_core::nn::ParameterSet<f32>,
    what: &str,
) -> Result<()> {
    let same = expected.len() == got.len()
        && expected
            .iter()
            .zip(got.iter())
            .all(|((n1, t1), (n2, t2))| n1 == n2 && t1.shape() == t2.shape());
    if same {
        Ok(())
    } else {
        Err(LabError::config(format!(
            "{what} parameters do not match the architecture named in the checkpoint"
        )))
    }
}
