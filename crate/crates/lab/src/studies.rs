//! Multi-run studies: every variant × seed is trained, evaluated on the full
//! context grid and summarized in one table.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sparc_core::agent::Method;
use sparc_core::eval::{delta_grid, EvalGrid, GridCell};

use crate::config::{RolloutPolicy, RunConfig};
use crate::error::{LabError, Result};
use crate::harness::{self, evaluate_grid, write_eval_dir, SummaryJson};
use crate::store::{run_dir, RunDir};
use crate::trainer::{train, Exec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Study {
    Wind,
    PowerMass,
    RolloutAblation,
    HistoryAblation,
}

impl Study {
    pub const ALL: [Study; 4] = [
        Study::Wind,
        Study::PowerMass,
        Study::RolloutAblation,
        Study::HistoryAblation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Study::Wind => "wind",
            Study::PowerMass => "power_mass",
            Study::RolloutAblation => "rollout_ablation",
            Study::HistoryAblation => "history_ablation",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|x| x.name() == s)
    }

    pub fn default_seeds(self) -> u64 {
        match self {
            Study::Wind => 5,
            Study::PowerMass | Study::RolloutAblation | Study::HistoryAblation => 3,
        }
    }

    fn env(self) -> &'static str {
        match self {
            Study::PowerMass => "linear_racer",
            _ => "windy_pointmass",
        }
    }

    /// `(label, overrides)` per variant.
    pub fn variants(self) -> Vec<(String, Vec<String>)> {
        let method = |m: Method| vec![format!("run.method={}", m.name())];
        match self {
            Study::Wind | Study::PowerMass => Method::ALL
                .iter()
                .map(|&m| (m.name().to_string(), method(m)))
                .collect(),
            Study::RolloutAblation => [RolloutPolicy::Adapter, RolloutPolicy::Expert]
                .iter()
                .map(|p| {
                    let name = match p {
                        RolloutPolicy::Adapter => "adapter",
                        RolloutPolicy::Expert => "expert",
                    };
                    let mut o = method(Method::Sparc);
                    o.push(format!("run.rollout_policy={name}"));
                    (format!("sparc_rollout_{name}"), o)
                })
                .collect(),
            Study::HistoryAblation => [20usize, 50, 100]
                .iter()
                .map(|h| {
                    let mut o = method(Method::Sparc);
                    o.push(format!("hyper.history_len={h}"));
                    (format!("sparc_h{h}"), o)
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StudyOptions {
    pub out: PathBuf,
    pub seeds: u64,
    /// Applied to every run before the variant's own settings.
    pub overrides: Vec<String>,
    pub force: bool,
    /// Print progress lines to stderr.
    pub verbose: bool,
}

/// Per-seed aggregates of one variant.
#[derive(Debug, Clone, Serialize)]
pub struct SeedResult {
    pub seed: u64,
    pub ind_metric: f64,
    pub ood_metric: f64,
    pub ind_success_pct: f64,
    pub ood_success_pct: f64,
    pub ind_ratio: f64,
    pub ood_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantResult {
    pub label: String,
    pub seeds: Vec<SeedResult>,
    #[serde(skip)]
    pub grids: Vec<EvalGrid>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyReport {
    pub study: String,
    pub env: String,
    pub lower_is_better: bool,
    pub variants: Vec<VariantResult>,
    pub failures: Vec<String>,
}

fn mean_sem(v: &[f64]) -> (f64, f64) {
    let v: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Cellwise mean over grids with identical axes.
pub fn mean_grid(grids: &[EvalGrid]) -> Result<EvalGrid> {
    let first = grids
        .first()
        .ok_or_else(|| LabError::runtime("no grids to average"))?;
    let cells = (0..first.cells.len())
        .map(|i| {
            let all: Vec<&GridCell> = grids.iter().map(|g| &g.cells[i]).collect();
            let valid = all.iter().all(|c| c.valid);
            let avg = |f: &dyn Fn(&GridCell) -> f64| {
                all.iter().map(|c| f(c)).sum::<f64>() / all.len() as f64
            };
            GridCell {
                context: first.cells[i].context.clone(),
                is_ood: first.cells[i].is_ood,
                valid,
                mean_metric: avg(&|c| c.mean_metric),
                success_pct: avg(&|c| c.success_pct),
                ratio: avg(&|c| c.ratio),
                n_episodes: all.iter().map(|c| c.n_episodes).sum(),
            }
        })
        .collect();
    Ok(EvalGrid::new(
        first.axis_names.clone(),
        first.axes.clone(),
        first.metric_is_time,
        cells,
    )?)
}

fn fmt(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.4}")
    } else {
        "NaN".into()
    }
}

pub const SUMMARY_HEADER: &str = "variant,n_seeds,ind_metric,ind_sem,ood_metric,ood_sem,ind_success_pct,ood_success_pct,ind_ratio,ood_ratio";

/// Summary table rows (CSV) and the same table in Markdown.
pub fn summary_tables(report: &StudyReport) -> (String, String) {
    let mut csv = format!("{SUMMARY_HEADER}\n");
    let metric = if report.lower_is_better { "lap time" } else { "return" };
    let mut md = format!(
        "| variant | seeds | IND {metric} | OOD {metric} | IND success % | OOD success % | IND ratio | OOD ratio |\n|---|---|---|---|---|---|---|---|\n"
    );
    for v in &report.variants {
        let col = |f: &dyn Fn(&SeedResult) -> f64| mean_sem(&v.seeds.iter().map(f).collect::<Vec<_>>());
        let (im, is) = col(&|s| s.ind_metric);
        let (om, os) = col(&|s| s.ood_metric);
        let (isp, _) = col(&|s| s.ind_success_pct);
        let (osp, _) = col(&|s| s.ood_success_pct);
        let (ir, _) = col(&|s| s.ind_ratio);
        let (or, _) = col(&|s| s.ood_ratio);
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            v.label,
            v.seeds.len(),
            fmt(im),
            fmt(is),
            fmt(om),
            fmt(os),
            fmt(isp),
            fmt(osp),
            fmt(ir),
            fmt(or)
        ));
        md.push_str(&format!(
            "| {} | {} | {} ± {} | {} ± {} | {} | {} | {} | {} |\n",
            v.label,
            v.seeds.len(),
            fmt(im),
            fmt(is),
            fmt(om),
            fmt(os),
            fmt(isp),
            fmt(osp),
            fmt(ir),
            fmt(or)
        ));
    }
    (csv, md)
}

/// Trains and evaluates one run; returns its grid.
pub fn run_and_evaluate(cfg: &RunConfig, root: &Path, force: bool) -> Result<EvalGrid> {
    let dir = run_dir(root, cfg);
    let mut rec = RunDir::create(&dir, cfg, force)?;
    let outcome = train(cfg, Exec::Threaded, &mut rec)?;
    rec.flush()?;
    let env = cfg.env_config()?;
    let spec = cfg.context_spec()?;
    let method = cfg.method()?;
    let policy = outcome.agent.acting_policy(outcome.agent.deploy_role())?;
    let with_context = method.contract().test.context;
    harness::check_contract(method, &policy, with_context)?;
    let grid = evaluate_grid(
        &policy,
        &env,
        &spec,
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
    write_eval_dir(&dir.join("eval").join("selected"), &grid, &summary)?;
    Ok(grid)
}

/// Runs every variant × seed of `study` under `opts.out/<study>/`.
///
/// A failing run is recorded and the remaining runs continue.
pub fn reproduce(study: Study, opts: &StudyOptions) -> Result<StudyReport> {
    let root = opts.out.join(study.name());
    fs::create_dir_all(&root)?;
    let base = RunConfig::default()
        .with_overrides(&[format!("run.env={}", study.env())])?
        .with_overrides(&opts.overrides)?;
    let mut report = StudyReport {
        study: study.name().into(),
        env: study.env().into(),
        lower_is_better: base.env_kind()?.metric_is_time(),
        variants: Vec::new(),
        failures: Vec::new(),
    };
    for (label, overrides) in study.variants() {
        let mut variant = VariantResult {
            label: label.clone(),
            seeds: Vec::new(),
            grids: Vec::new(),
        };
        for seed in 0..opts.seeds {
            let mut o = overrides.clone();
            o.push(format!("run.name={label}"));
            o.push(format!("run.seed={seed}"));
            let cfg = base.with_overrides(&o)?;
            if opts.verbose {
                eprintln!("[{}] {label} seed {seed}", study.name());
            }
            match run_and_evaluate(&cfg, &root, opts.force) {
                Ok(grid) => {
                    let s = grid.summary();
                    variant.seeds.push(SeedResult {
                        seed,
                        ind_metric: s.ind.mean_metric,
                        ood_metric: s.ood.mean_metric,
                        ind_success_pct: s.ind.success_pct,
                        ood_success_pct: s.ood.success_pct,
                        ind_ratio: s.ind.mean_ratio,
                        ood_ratio: s.ood.mean_ratio,
                    });
                    variant.grids.push(grid);
                }
                Err(e) => report.failures.push(format!("{label} seed {seed}: {e}")),
            }
        }
        if !variant.grids.is_empty() {
            harness::write_grid_csv(
                &mean_grid(&variant.grids)?,
                &root.join(format!("mean_grid_{label}.csv")),
            )?;
        }
        report.variants.push(variant);
    }
    let (csv, md) = summary_tables(&report);
    fs::write(root.join("summary.csv"), csv)?;
    fs::write(root.join("summary.md"), md)?;
    fs::write(
        root.join("study.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    if matches!(study, Study::Wind | Study::PowerMass) {
        write_method_delta(&root, "sparc", "rma")?;
    }
    Ok(report)
}

/// Delta CSV between the seed-averaged grids of two variants, if both exist.
fn write_method_delta(root: &Path, a: &str, b: &str) -> Result<()> {
    let pa = root.join(format!("mean_grid_{a}.csv"));
    let pb = root.join(format!("mean_grid_{b}.csv"));
    if !(pa.exists() && pb.exists()) {
        return Ok(());
    }
    let text = compare_files(&pa, &pb, None)?;
    fs::write(root.join(format!("delta_{a}_vs_{b}.csv")), text)?;
    Ok(())
}

/// Delta CSV text of two grid files. The metric direction is taken from
/// `lower_is_better`, or else from a `summary.json` next to the first file.
pub fn compare_files(a: &Path, b: &Path, lower_is_better: Option<bool>) -> Result<String> {
    let read = |p: &Path| {
        fs::read(p).map_err(|e| LabError::config(format!("{}: {e}", p.display())))
    };
    let (ba, bb) = (read(a)?, read(b)?);
    let time = match lower_is_better {
        Some(v) => v,
        None => sibling_direction(a).or_else(|| sibling_direction(b)).unwrap_or(false),
    };
    let text = |bytes: &[u8], p: &Path| {
        String::from_utf8(bytes.to_vec())
            .map_err(|_| LabError::config(format!("{} is not UTF-8", p.display())))
    };
    let ga = harness::read_grid_csv(&text(&ba, a)?, time)?;
    let gb = harness::read_grid_csv(&text(&bb, b)?, time)?;
    if ga.axes != gb.axes {
        return Err(LabError::config("grids have different axes"));
    }
    let delta = delta_grid(&ga, &gb)?;
    harness::delta_csv(
        &delta,
        (&a.display().to_string(), &harness::sha256_hex(&ba)),
        (&b.display().to_string(), &harness::sha256_hex(&bb)),
    )
}

fn sibling_direction(p: &Path) -> Option<bool> {
    let text = fs::read_to_string(p.parent()?.join("summary.json")).ok()?;
    let v: serde_json::Value = serde_json::from_str(&text).ok()?;
    v.get("lower_is_better")?.as_bool()
}

/// Upper tail `P(X >= k)` of Binomial(n, 1/2).
pub fn binomial_upper_tail(n: u64, k: u64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n {
        return 0.0;
    }
    // log C(n, i) accumulated incrementally
    let ln_half_n = n as f64 * 0.5f64.ln();
    let mut ln_c = 0.0f64;
    let mut total = 0.0;
    for i in 0..=n {
        if i > 0 {
            ln_c += ((n - i + 1) as f64).ln() - (i as f64).ln();
        }
        if i >= k {
            total += (ln_c + ln_half_n).exp();
        }
    }
    total.min(1.0)
}

/// Cellwise comparison of two grids over their OOD cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignTest {
    pub cells: u64,
    /// Cells where the first grid is at least as good.
    pub at_least: u64,
    /// Strictly better / strictly worse, ties excluded.
    pub better: u64,
    pub worse: u64,
    /// One-sided p-value for "first is worse than second".
    pub p_worse: f64,
    /// One-sided p-value for "first is better than second".
    pub p_better: f64,
}

pub fn ood_sign_test(a: &EvalGrid, b: &EvalGrid) -> SignTest {
    let sign = if a.metric_is_time { -1.0 } else { 1.0 };
    let (mut cells, mut at_least, mut better, mut worse) = (0, 0, 0, 0);
    for (x, y) in a.cells.iter().zip(&b.cells) {
        if !(x.is_ood && x.valid && y.valid) {
            continue;
        }
        let d = sign * (x.mean_metric - y.mean_metric);
        if !d.is_finite() {
            continue;
        }
        cells += 1;
        at_least += (d >= 0.0) as u64;
        better += (d > 0.0) as u64;
        worse += (d < 0.0) as u64;
    }
    let n = better + worse;
    SignTest {
        cells,
        at_least,
        better,
        worse,
        p_worse: binomial_upper_tail(n, worse),
        p_better: binomial_upper_tail(n, better),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomial_tail_small_cases() {
        // n = 4: P(X >= 3) = (4 + 1) / 16
        assert!((binomial_upper_tail(4, 3) - 5.0 / 16.0).abs() < 1e-12);
        assert_eq!(binomial_upper_tail(4, 0), 1.0);
        assert!((binomial_upper_tail(10, 10) - 1.0 / 1024.0).abs() < 1e-15);
        assert!((binomial_upper_tail(400, 200) - 0.5199).abs() < 1e-3);
    }

    #[test]
    fn variants_cover_each_study() {
        assert_eq!(Study::Wind.variants().len(), 5);
        assert_eq!(Study::HistoryAblation.variants().len(), 3);
        assert_eq!(Study::RolloutAblation.variants().len(), 2);
        for s in Study::ALL {
            assert_eq!(Study::parse(s.name()), Some(s));
        }
    }
}
