//! Grid evaluation and its file formats.
//!
//! Grid CSV columns: `axis1,axis2,is_ood,mean_metric,success_pct,ratio,n_episodes`.
//! Cells outside the environment's physical range are written with
//! `n_episodes = 0` and NaN metrics. Delta files carry `#` comment lines with
//! the sign convention and the SHA-256 of both inputs, then the columns
//! `axis1,axis2,is_ood,mean_metric,ratio,n_episodes`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sparc_core::agent::{ActingPolicy, Method};
use sparc_core::envs::{Context, ContextSpec, EnvConfig};
use sparc_core::eval::{evaluate_cell, scripted_reference, Aggregate, EvalGrid, GridCell, GridSummary};
use sparc_core::rng::{stream, stream_rng};

use crate::error::{LabError, Result};

pub const GRID_HEADER: [&str; 7] = [
    "axis1",
    "axis2",
    "is_ood",
    "mean_metric",
    "success_pct",
    "ratio",
    "n_episodes",
];
pub const DELTA_HEADER: [&str; 6] = ["axis1", "axis2", "is_ood", "mean_metric", "ratio", "n_episodes"];

/// Deterministic-action closure over a policy, honoring what it may see.
fn deterministic_actor<'a>(
    policy: &'a ActingPolicy<f32>,
    ctx: &'a Context,
    with_context: bool,
) -> impl FnMut(&[f64], &sparc_core::envs::HistoryBuffer) -> sparc_core::Result<Vec<f64>> + 'a {
    // deterministic actions never touch the generator
    let mut rng = stream_rng(0, stream::EVAL);
    move |obs, history| {
        policy.act(
            obs,
            &history.window(),
            with_context.then_some(ctx.values.as_slice()),
            &mut rng,
            true,
        )
    }
}

/// Checks that `method`'s deployed policy can run with the inputs offered.
pub fn check_contract(method: Method, policy: &ActingPolicy<f32>, context_offered: bool) -> Result<()> {
    if policy.net.uses_context() && !context_offered {
        return Err(LabError::config(format!(
            "{} needs the context at test time but it is withheld",
            method.name()
        )));
    }
    if context_offered && !method.contract().test.context {
        return Err(LabError::config(format!(
            "{} may not see the context at test time",
            method.name()
        )));
    }
    Ok(())
}

fn resolve_threads(threads: usize) -> usize {
    if threads > 0 {
        return threads;
    }
    let avail = std::thread::available_parallelism().map_or(1, |n| n.get());
    std::env::var("SPARC_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v > 0)
        .map_or(avail, |c| c.min(avail))
}

/// Evaluates every cell of `spec`'s grid with deterministic actions.
///
/// Cells are split across `threads` (0 = available cores); results do not
/// depend on the split.
pub fn evaluate_grid(
    policy: &ActingPolicy<f32>,
    env: &EnvConfig,
    spec: &ContextSpec,
    seeds: &[u64],
    with_context: bool,
    threads: usize,
) -> Result<EvalGrid> {
    if seeds.is_empty() {
        return Err(LabError::config("evaluation needs at least one episode per cell"));
    }
    let cells = spec.eval_grid();
    let threads = resolve_threads(threads).min(cells.len()).max(1);
    let history_len = policy.net.dims.history_len;
    let run = |(ctx, ood): &(Context, bool)| -> Result<GridCell> {
        if !env.context_is_valid(ctx) {
            return Ok(GridCell::invalid(ctx.values.clone(), *ood));
        }
        let reference = scripted_reference(env, ctx, seeds)?;
        let actor = deterministic_actor(policy, ctx, with_context);
        Ok(evaluate_cell(env, ctx, *ood, seeds, history_len, &reference, actor)?)
    };
    let chunk = cells.len().div_ceil(threads);
    let results: Vec<Result<Vec<GridCell>>> = std::thread::scope(|s| {
        let handles: Vec<_> = cells
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(run).collect::<Result<Vec<_>>>()))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(LabError::runtime("evaluation thread panicked"))))
            .collect()
    });
    let mut out = Vec::with_capacity(cells.len());
    for r in results {
        out.extend(r?);
    }
    let axes = (0..spec.dim()).map(|a| spec.axis_values(a)).collect();
    Ok(EvalGrid::new(
        spec.names.clone(),
        axes,
        env.kind().metric_is_time(),
        out,
    )?)
}

/// Metric vector over the fixed IND checkpoint settings, higher is better:
/// mean return, or the negated lap-time ratio for time metrics.
pub fn checkpoint_metrics(
    policy: &ActingPolicy<f32>,
    env: &EnvConfig,
    spec: &ContextSpec,
    seeds: &[u64],
    with_context: bool,
) -> Result<Vec<f64>> {
    let time = env.kind().metric_is_time();
    spec.checkpoint_eval_contexts()
        .iter()
        .map(|ctx| {
            let reference = scripted_reference(env, ctx, seeds)?;
            let actor = deterministic_actor(policy, ctx, with_context);
            let cell = evaluate_cell(
                env,
                ctx,
                false,
                seeds,
                policy.net.dims.history_len,
                &reference,
                actor,
            )?;
            Ok(if time { -cell.ratio } else { cell.mean_metric })
        })
        .collect()
}

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v}")
    }
}

fn axis_value(cell: &GridCell, axis: usize) -> String {
    cell.context.get(axis).map_or_else(String::new, |&v| fmt_f64(v))
}

pub fn grid_csv(grid: &EvalGrid) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(GRID_HEADER)?;
    for c in &grid.cells {
        w.write_record([
            axis_value(c, 0),
            axis_value(c, 1),
            (c.is_ood as u8).to_string(),
            fmt_f64(c.mean_metric),
            fmt_f64(c.success_pct),
            fmt_f64(c.ratio),
            c.n_episodes.to_string(),
        ])?;
    }
    String::from_utf8(w.into_inner().map_err(|e| LabError::runtime(e.to_string()))?)
        .map_err(|e| LabError::runtime(e.to_string()))
}

pub fn write_grid_csv(grid: &EvalGrid, path: &Path) -> Result<()> {
    fs::write(path, grid_csv(grid)?)?;
    Ok(())
}

fn parse_f64(field: &str, what: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| LabError::config(format!("{what}: `{field}` is not a number")))
}

/// Reads a grid CSV. `metric_is_time` cannot be recovered from the file and
/// is taken from the caller. Axis names are `axis1`, `axis2`.
pub fn read_grid_csv(text: &str, metric_is_time: bool) -> Result<EvalGrid> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != GRID_HEADER {
        return Err(LabError::config(format!(
            "expected grid columns {GRID_HEADER:?}, found {header:?}"
        )));
    }
    let mut cells = Vec::new();
    for row in r.records() {
        let row = row?;
        if row.len() != GRID_HEADER.len() {
            return Err(LabError::config("grid row with the wrong number of fields"));
        }
        let n_episodes: usize = row[6]
            .trim()
            .parse()
            .map_err(|_| LabError::config("n_episodes is not an integer"))?;
        cells.push(GridCell {
            context: vec![parse_f64(&row[0], "axis1")?, parse_f64(&row[1], "axis2")?],
            is_ood: &row[2] == "1",
            valid: n_episodes > 0,
            mean_metric: parse_f64(&row[3], "mean_metric")?,
            success_pct: parse_f64(&row[4], "success_pct")?,
            ratio: parse_f64(&row[5], "ratio")?,
            n_episodes,
        });
    }
    let axes = recover_axes(&cells)?;
    Ok(EvalGrid::new(
        vec!["axis1".into(), "axis2".into()],
        axes,
        metric_is_time,
        cells,
    )?)
}

/// Axis values in file order from a first-axis-major cell list.
fn recover_axes(cells: &[GridCell]) -> Result<Vec<Vec<f64>>> {
    let mut first: Vec<f64> = Vec::new();
    let mut second: Vec<f64> = Vec::new();
    for c in cells {
        if first.last() != Some(&c.context[0]) {
            first.push(c.context[0]);
        }
        if first.len() == 1 {
            second.push(c.context[1]);
        }
    }
    if first.len() * second.len() != cells.len() {
        return Err(LabError::config("grid rows do not form a full lattice"));
    }
    for (i, c) in cells.iter().enumerate() {
        if c.context[0] != first[i / second.len()] || c.context[1] != second[i % second.len()] {
            return Err(LabError::config("grid rows are not in first-axis-major order"));
        }
    }
    Ok(vec![first, second])
}

pub fn delta_csv(delta: &EvalGrid, first: (&str, &str), second: (&str, &str)) -> Result<String> {
    let mut out = String::new();
    if delta.metric_is_time {
        out.push_str("# delta = -(first - second): lower lap time is better, so positive means the first run is better\n");
    } else {
        out.push_str("# delta = first - second: positive means the first run is better\n");
    }
    out.push_str(&format!("# first: {} sha256={}\n", first.0, first.1));
    out.push_str(&format!("# second: {} sha256={}\n", second.0, second.1));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(DELTA_HEADER)?;
    for c in &delta.cells {
        w.write_record([
            axis_value(c, 0),
            axis_value(c, 1),
            (c.is_ood as u8).to_string(),
            fmt_f64(if c.valid { c.mean_metric } else { f64::NAN }),
            fmt_f64(if c.valid { c.ratio } else { f64::NAN }),
            if c.valid { c.n_episodes } else { 0 }.to_string(),
        ])?;
    }
    out.push_str(
        std::str::from_utf8(&w.into_inner().map_err(|e| LabError::runtime(e.to_string()))?)
            .map_err(|e| LabError::runtime(e.to_string()))?,
    );
    Ok(out)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateJson {
    pub n_cells: usize,
    pub mean_metric: Option<f64>,
    pub sem_metric: Option<f64>,
    pub success_pct: Option<f64>,
    pub mean_ratio: Option<f64>,
    pub sem_ratio: Option<f64>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl From<&Aggregate> for AggregateJson {
    fn from(a: &Aggregate) -> Self {
        Self {
            n_cells: a.n_cells,
            mean_metric: finite(a.mean_metric),
            sem_metric: finite(a.sem_metric),
            success_pct: finite(a.success_pct),
            mean_ratio: finite(a.mean_ratio),
            sem_ratio: finite(a.sem_ratio),
        }
    }
}

/// IND/OOD aggregates of one evaluated grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryJson {
    pub env: String,
    pub method: String,
    pub checkpoint: String,
    pub metric: String,
    pub lower_is_better: bool,
    pub dynamics_factor: f64,
    pub grid_resolution: usize,
    pub seeds: Vec<u64>,
    pub ind: AggregateJson,
    pub ood: AggregateJson,
    pub all: AggregateJson,
    pub invalid_cells: usize,
}

impl SummaryJson {
    pub fn new(
        grid: &EvalGrid,
        summary: &GridSummary,
        env: &EnvConfig,
        method: Method,
        checkpoint: &str,
        dynamics_factor: f64,
        seeds: &[u64],
    ) -> Self {
        let time = grid.metric_is_time;
        Self {
            env: env.kind().name().into(),
            method: method.name().into(),
            checkpoint: checkpoint.into(),
            metric: if time { "lap_time" } else { "return" }.into(),
            lower_is_better: time,
            dynamics_factor,
            grid_resolution: grid.axes.first().map_or(0, Vec::len),
            seeds: seeds.to_vec(),
            ind: (&summary.ind).into(),
            ood: (&summary.ood).into(),
            all: (&summary.all).into(),
            invalid_cells: summary.invalid_cells,
        }
    }
}

/// Grid plus summary written as `grid.csv` and `summary.json` under `dir`.
pub fn write_eval_dir(dir: &Path, grid: &EvalGrid, summary: &SummaryJson) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_grid_csv(grid, &dir.join("grid.csv"))?;
    fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(summary)? + "\n",
    )?;
    Ok(())
}
