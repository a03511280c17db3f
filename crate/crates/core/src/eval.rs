//! Evaluation bookkeeping: per-cell metrics, scripted ratios, IND/OOD
//! aggregates, Pareto checkpoint selection and delta grids.

use alloc::string::String;
use alloc::vec::Vec;

use crate::envs::{run_episode, run_scripted, Context, EnvConfig, EpisodeStats, HistoryBuffer};
use crate::error::{config_err, Result};

/// Ratio assigned to an episode that failed to complete.
pub const FAILURE_RATIO: f64 = 2.0;

/// Lap-time ratio `agent / scripted`, or [`FAILURE_RATIO`] on failure.
pub fn normalized_ratio(agent_metric: f64, scripted_metric: f64, success: bool) -> Result<f64> {
    if !(scripted_metric > 0.0) {
        return Err(config_err!(
            "scripted metric must be positive, got {scripted_metric}"
        ));
    }
    Ok(if success {
        agent_metric / scripted_metric
    } else {
        FAILURE_RATIO
    })
}

/// Return index for reward-metric envs: `1 + (agent - scripted) / |scripted|`.
/// Equals 1 when matching the scripted controller, larger is better.
pub fn return_index(agent_return: f64, scripted_return: f64) -> Result<f64> {
    if scripted_return == 0.0 || !scripted_return.is_finite() {
        return Err(config_err!(
            "scripted return must be finite and nonzero, got {scripted_return}"
        ));
    }
    Ok(1.0 + (agent_return - scripted_return) / scripted_return.abs())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub context: Vec<f64>,
    pub is_ood: bool,
    /// False when the context is outside the env's physical validity.
    pub valid: bool,
    /// Mean return, or mean lap time over finished episodes for time metrics.
    pub mean_metric: f64,
    pub success_pct: f64,
    pub ratio: f64,
    pub n_episodes: usize,
}

impl GridCell {
    pub fn invalid(context: Vec<f64>, is_ood: bool) -> Self {
        Self {
            context,
            is_ood,
            valid: false,
            mean_metric: f64::NAN,
            success_pct: f64::NAN,
            ratio: f64::NAN,
            n_episodes: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalGrid {
    pub axis_names: Vec<String>,
    pub axes: Vec<Vec<f64>>,
    pub metric_is_time: bool,
    /// First axis major.
    pub cells: Vec<GridCell>,
}

impl EvalGrid {
    pub fn new(
        axis_names: Vec<String>,
        axes: Vec<Vec<f64>>,
        metric_is_time: bool,
        cells: Vec<GridCell>,
    ) -> Result<Self> {
        let expected: usize = axes.iter().map(Vec::len).product();
        if cells.len() != expected || axis_names.len() != axes.len() {
            return Err(config_err!(
                "grid has {} cells for axes of lengths {:?}",
                cells.len(),
                axes.iter().map(Vec::len).collect::<Vec<_>>()
            ));
        }
        Ok(Self {
            axis_names,
            axes,
            metric_is_time,
            cells,
        })
    }

    pub fn summary(&self) -> GridSummary {
        let pick = |f: &dyn Fn(&GridCell) -> bool| {
            let cells: Vec<&GridCell> = self.cells.iter().filter(|c| c.valid && f(c)).collect();
            Aggregate::of(&cells)
        };
        GridSummary {
            ind: pick(&|c| !c.is_ood),
            ood: pick(&|c| c.is_ood),
            all: pick(&|_| true),
            invalid_cells: self.cells.iter().filter(|c| !c.valid).count(),
        }
    }
}

/// Mean and standard error of the mean over cells.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Aggregate {
    pub n_cells: usize,
    pub mean_metric: f64,
    pub sem_metric: f64,
    pub success_pct: f64,
    pub mean_ratio: f64,
    pub sem_ratio: f64,
}

fn mean_sem(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, num_traits::Float::sqrt(var / n))
}

impl Aggregate {
    pub fn of(cells: &[&GridCell]) -> Self {
        let (mean_metric, sem_metric) = mean_sem(cells.iter().map(|c| c.mean_metric));
        let (mean_ratio, sem_ratio) = mean_sem(cells.iter().map(|c| c.ratio));
        let (success_pct, _) = mean_sem(cells.iter().map(|c| c.success_pct));
        Self {
            n_cells: cells.len(),
            mean_metric,
            sem_metric,
            success_pct,
            mean_ratio,
            sem_ratio,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GridSummary {
    pub ind: Aggregate,
    pub ood: Aggregate,
    pub all: Aggregate,
    pub invalid_cells: usize,
}

/// Scripted reference for one cell: per-seed episode statistics.
pub fn scripted_reference(
    env: &EnvConfig,
    ctx: &Context,
    seeds: &[u64],
) -> Result<Vec<EpisodeStats>> {
    let mut e = env.build();
    seeds
        .iter()
        .map(|&s| run_scripted(&mut e, ctx, s))
        .collect()
}

/// Evaluates one context cell.
///
/// `policy(obs, history)` must act deterministically. `scripted` holds the
/// reference episodes for the same `seeds`, in order.
pub fn evaluate_cell<P>(
    env: &EnvConfig,
    ctx: &Context,
    is_ood: bool,
    seeds: &[u64],
    history_len: usize,
    scripted: &[EpisodeStats],
    mut policy: P,
) -> Result<GridCell>
where
    P: FnMut(&[f64], &HistoryBuffer) -> Result<Vec<f64>>,
{
    if seeds.is_empty() {
        return Err(config_err!(
            "evaluation needs at least one episode per cell"
        ));
    }
    if scripted.len() != seeds.len() {
        return Err(config_err!(
            "{} scripted references for {} seeds",
            scripted.len(),
            seeds.len()
        ));
    }
    if !env.context_is_valid(ctx) {
        return Ok(GridCell::invalid(ctx.values.clone(), is_ood));
    }
    let kind = env.kind();
    let time = kind.metric_is_time();
    let mut e = env.build();
    let mut history = HistoryBuffer::new(history_len.max(1), kind.obs_dim(), kind.action_dim());
    let mut metric = Vec::new();
    let mut ratios = Vec::new();
    let mut successes = 0usize;
    for (&seed, reference) in seeds.iter().zip(scripted) {
        let stats = run_episode(&mut e, ctx, seed, &mut history, &mut policy)?;
        successes += stats.success() as usize;
        if time {
            let reference_time = match (reference.success(), reference.lap_time) {
                (true, Some(t)) => Some(t),
                _ if !is_ood => {
                    return Err(config_err!(
                        "scripted controller failed on IND context {:?}",
                        ctx.values
                    ))
                }
                _ => None,
            };
            if let Some(t) = stats.lap_time.filter(|_| stats.success()) {
                metric.push(t);
            }
            ratios.push(match reference_time {
                Some(r) => {
                    normalized_ratio(stats.lap_time.unwrap_or(f64::NAN), r, stats.success())?
                }
                None => f64::NAN,
            });
        } else {
            metric.push(stats.ret);
            ratios.push(return_index(stats.ret, reference.ret)?);
        }
    }
    let n = seeds.len();
    let mean = |v: &[f64]| {
        if v.is_empty() || v.iter().any(|x| x.is_nan()) {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    Ok(GridCell {
        context: ctx.values.clone(),
        is_ood,
        valid: true,
        mean_metric: mean(&metric),
        success_pct: 100.0 * successes as f64 / n as f64,
        ratio: mean(&ratios),
        n_episodes: n,
    })
}

/// Per-checkpoint metric vector, higher is better in every coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointScore {
    pub id: u64,
    pub metrics: Vec<f64>,
}

/// `a` dominates `b`: no worse everywhere and strictly better somewhere.
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x >= y) && a.iter().zip(b).any(|(x, y)| x > y)
}

/// Non-dominated checkpoint with the highest mean metric; ties go to the
/// latest (largest id). `None` for an empty list.
pub fn pareto_select(scores: &[CheckpointScore]) -> Option<u64> {
    let mean = |s: &CheckpointScore| s.metrics.iter().sum::<f64>() / s.metrics.len().max(1) as f64;
    scores
        .iter()
        .filter(|s| !scores.iter().any(|o| dominates(&o.metrics, &s.metrics)))
        .max_by(|a, b| mean(a).total_cmp(&mean(b)).then(a.id.cmp(&b.id)))
        .map(|s| s.id)
}

/// Cellwise difference `a - b` oriented so positive means `a` is better.
///
/// For time metrics (lower is better) both the metric and the ratio are
/// negated. Success columns are not carried over.
pub fn delta_grid(a: &EvalGrid, b: &EvalGrid) -> Result<EvalGrid> {
    if a.axes != b.axes || a.axis_names != b.axis_names || a.metric_is_time != b.metric_is_time {
        return Err(config_err!("grids have different axes or metrics"));
    }
    let sign = if a.metric_is_time { -1.0 } else { 1.0 };
    let cells = a
        .cells
        .iter()
        .zip(&b.cells)
        .map(|(x, y)| GridCell {
            context: x.context.clone(),
            is_ood: x.is_ood,
            valid: x.valid && y.valid,
            mean_metric: sign * (x.mean_metric - y.mean_metric),
            success_pct: f64::NAN,
            ratio: sign * (x.ratio - y.ratio),
            n_episodes: x.n_episodes.min(y.n_episodes),
        })
        .collect();
    EvalGrid::new(
        a.axis_names.clone(),
        a.axes.clone(),
        a.metric_is_time,
        cells,
    )
}
