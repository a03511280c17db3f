use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sparc_core::envs::EnvConfig;
use sparc_lab::config::RunConfig;
use sparc_lab::error::{LabError, Result};
use sparc_lab::harness::{self, SummaryJson};
use sparc_lab::store::{self, run_dir, RunDir};
use sparc_lab::studies::{self, Study, StudyOptions};
use sparc_lab::trainer::{train, Exec};

#[derive(Parser)]
#[command(name = "sparc", version, about = "Train and evaluate context-adaptive policies")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one run into runs/<name>/<seed>/.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the context grid.
    Eval(EvalArgs),
    /// Cellwise difference of two grid CSVs.
    Compare(CompareArgs),
    /// Run one of the multi-run studies.
    Reproduce(ReproduceArgs),
}

#[derive(clap::Args)]
struct TrainArgs {
    /// TOML run configuration; defaults apply to anything missing.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    updates: Option<u64>,
    /// adapter (default) or expert.
    #[arg(long)]
    rollout_policy: Option<String>,
    #[arg(long)]
    history_len: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    /// Single worker in lockstep with the learner.
    #[arg(long)]
    deterministic: bool,
    /// Extra `section.key=value` settings.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Overwrite an existing run directory.
    #[arg(long)]
    force: bool,
    /// Also evaluate the selected checkpoint on the full grid.
    #[arg(long)]
    eval: bool,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 21)]
    grid_resolution: usize,
    /// Comma-separated episode seeds per cell.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    /// Multiply drag (and divide actuation) on top of the training dynamics.
    #[arg(long, default_value_t = 1.0)]
    perturb_dynamics: f64,
    /// Do not offer the context to the policy.
    #[arg(long)]
    withhold_context: bool,
    /// Output directory; defaults to eval/<checkpoint stem> next to the run.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Evaluation threads; 0 uses every available core.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(clap::Args)]
struct CompareArgs {
    first: PathBuf,
    second: PathBuf,
    /// Write here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Treat the metric as lap time; read from summary.json when omitted.
    #[arg(long)]
    lower_is_better: Option<bool>,
}

#[derive(clap::Args)]
struct ReproduceArgs {
    /// wind, power_mass, rollout_ablation or history_ablation.
    study: String,
    /// Seeds per variant; the study's default when omitted.
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    updates: Option<u64>,
    #[arg(long)]
    grid_resolution: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    eval_seeds: Option<Vec<u64>>,
    #[arg(long)]
    deterministic: bool,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Train(a) => cmd_train(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Compare(a) => cmd_compare(a),
        Cmd::Reproduce(a) => cmd_reproduce(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let base = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut o = Vec::new();
    let mut put = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            o.push(format!("{k}={v}"));
        }
    };
    put("run.method", a.method.map(|v| format!("\"{v}\"")));
    put("run.env", a.env.map(|v| format!("\"{v}\"")));
    put("run.seed", a.seed.map(|v| v.to_string()));
    put("run.name", a.name.map(|v| format!("\"{v}\"")));
    put("run.total_updates", a.updates.map(|v| v.to_string()));
    put("run.rollout_policy", a.rollout_policy.map(|v| format!("\"{v}\"")));
    put("hyper.history_len", a.history_len.map(|v| v.to_string()));
    put("rollout.workers", a.workers.map(|v| v.to_string()));
    if a.deterministic {
        o.push("rollout.deterministic=true".into());
    }
    o.extend(a.sets);
    let cfg = base.with_overrides(&o)?;
    let dir = run_dir(&a.out, &cfg);
    let mut rec = RunDir::create(&dir, &cfg, a.force)?;
    eprintln!(
        "training {} on {} (seed {}, {} updates, {} workers) into {}",
        cfg.run.method,
        cfg.run.env,
        cfg.run.seed,
        cfg.run.total_updates,
        cfg.effective_workers(),
        dir.display()
    );
    let outcome = train(&cfg, Exec::Threaded, &mut rec)?;
    rec.flush()?;
    eprintln!("selected checkpoint: step {}", outcome.selected);
    if let Some(t) = outcome.theta_star {
        eprintln!("rma phase-1 checkpoint frozen for phase 2: step {t}");
    }
    if a.eval {
        studies_eval(&cfg, &dir, &outcome)?;
    }
    Ok(())
}

fn studies_eval(cfg: &RunConfig, dir: &Path, outcome: &sparc_lab::trainer::TrainOutcome) -> Result<()> {
    let method = cfg.method()?;
    let policy = outcome.agent.acting_policy(outcome.agent.deploy_role())?;
    let with_context = method.contract().test.context;
    let env = cfg.env_config()?;
    let grid = harness::evaluate_grid(
        &policy,
        &env,
        &cfg.context_spec()?,
        &cfg.eval.seeds,
        with_context,
        cfg.eval.threads,
    )?;
    let summary = SummaryJson::new(
        &grid,
        &grid.summary(),
        &env,
        method,
        &format!("step {}", outcome.selected),
        cfg.env.dynamics_factor,
        &cfg.eval.seeds,
    );
    harness::write_eval_dir(&dir.join("eval").join("selected"), &grid, &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    if !(a.perturb_dynamics > 0.0 && a.perturb_dynamics.is_finite()) {
        return Err(LabError::config("--perturb-dynamics must be positive"));
    }
    let loaded = store::load_policy(&a.checkpoint)?;
    let offered = loaded.method.contract().test.context && !a.withhold_context;
    harness::check_contract(loaded.method, &loaded.policy, offered)?;
    let base = EnvConfig::default_for(loaded.env.kind());
    let factor = loaded.dynamics_factor * a.perturb_dynamics;
    let env = if factor == 1.0 {
        base.clone()
    } else {
        base.perturbed(factor)
    };
    let spec = base.default_context_spec(a.grid_resolution)?;
    let grid = harness::evaluate_grid(&loaded.policy, &env, &spec, &a.seeds, offered, a.threads)?;
    let stem = a
        .checkpoint
        .file_stem()
        .map_or_else(|| "checkpoint".into(), |s| s.to_string_lossy().into_owned());
    let tag = if a.perturb_dynamics == 1.0 {
        stem.clone()
    } else {
        format!("{stem}_perturb_{}", a.perturb_dynamics)
    };
    let out = match a.out {
        Some(o) => o,
        None => a
            .checkpoint
            .parent()
            .and_then(Path::parent)
            .map_or_else(|| PathBuf::from("eval"), |p| p.join("eval"))
            .join(tag),
    };
    let summary = SummaryJson::new(
        &grid,
        &grid.summary(),
        &env,
        loaded.method,
        &a.checkpoint.display().to_string(),
        factor,
        &a.seeds,
    );
    harness::write_eval_dir(&out, &grid, &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn cmd_compare(a: CompareArgs) -> Result<()> {
    let text = studies::compare_files(&a.first, &a.second, a.lower_is_better)?;
    match a.out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_reproduce(a: ReproduceArgs) -> Result<()> {
    let study = Study::parse(&a.study).ok_or_else(|| {
        LabError::config(format!(
            "unknown study `{}`; expected wind, power_mass, rollout_ablation or history_ablation",
            a.study
        ))
    })?;
    let mut o = Vec::new();
    if let Some(u) = a.updates {
        o.push(format!("run.total_updates={u}"));
    }
    if let Some(r) = a.grid_resolution {
        o.push(format!("eval.grid_resolution={r}"));
    }
    if let Some(s) = &a.eval_seeds {
        let list: Vec<String> = s.iter().map(u64::to_string).collect();
        o.push(format!("eval.seeds=[{}]", list.join(",")));
    }
    if a.deterministic {
        o.push("rollout.deterministic=true".into());
    }
    o.extend(a.sets);
    let opts = StudyOptions {
        out: a.out,
        seeds: a.seeds.unwrap_or(study.default_seeds()),
        overrides: o,
        force: a.force,
        verbose: true,
    };
    let report = studies::reproduce(study, &opts)?;
    let (_, md) = studies::summary_tables(&report);
    println!("{md}");
    if report.failures.is_empty() {
        Ok(())
    } else {
        for f in &report.failures {
            eprintln!("failed: {f}");
        }
        Err(LabError::runtime(format!(
            "{} of the study's runs failed",
            report.failures.len()
        )))
    }
}
