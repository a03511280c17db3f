use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{config_err, Result};

/// One context draw: a value per feature of its [`ContextSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct Context {
    pub values: Vec<f64>,
}

impl Context {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Training (IND) and evaluation ranges of each context feature.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextSpec {
    pub names: Vec<String>,
    pub ind_ranges: Vec<(f64, f64)>,
    pub ood_eval_ranges: Vec<(f64, f64)>,
    pub grid_resolution: usize,
}

const EDGE_TOL: f64 = 1e-9;

impl ContextSpec {
    pub fn new(
        names: &[&str],
        ind_ranges: Vec<(f64, f64)>,
        ood_eval_ranges: Vec<(f64, f64)>,
        grid_resolution: usize,
    ) -> Result<Self> {
        let spec = Self {
            names: names.iter().map(|s| s.to_string()).collect(),
            ind_ranges,
            ood_eval_ranges,
            grid_resolution,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.names.len();
        if n == 0 || self.ind_ranges.len() != n || self.ood_eval_ranges.len() != n {
            return Err(config_err!(
                "context spec needs one IND and one eval range per feature ({} names)",
                n
            ));
        }
        if self.grid_resolution < 2 {
            return Err(config_err!(
                "grid resolution must be at least 2, got {}",
                self.grid_resolution
            ));
        }
        for (i, (&(lo, hi), &(elo, ehi))) in self
            .ind_ranges
            .iter()
            .zip(&self.ood_eval_ranges)
            .enumerate()
        {
            if !(lo <= hi && elo <= ehi) || ![lo, hi, elo, ehi].iter().all(|v| v.is_finite()) {
                return Err(config_err!("invalid range for `{}`", self.names[i]));
            }
            if lo < elo - EDGE_TOL || hi > ehi + EDGE_TOL {
                return Err(config_err!(
                    "IND range of `{}` is not inside its evaluation range",
                    self.names[i]
                ));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    /// Independent uniform draw per feature over the IND ranges.
    pub fn sample_ind<R: Rng + ?Sized>(&self, rng: &mut R) -> Context {
        Context::new(
            self.ind_ranges
                .iter()
                .map(|&(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
                .collect(),
        )
    }

    pub fn is_ind(&self, ctx: &Context) -> bool {
        ctx.values
            .iter()
            .zip(&self.ind_ranges)
            .all(|(&v, &(lo, hi))| v >= lo - EDGE_TOL && v <= hi + EDGE_TOL)
    }

    /// Evenly spaced values of axis `axis` over its evaluation range.
    pub fn axis_values(&self, axis: usize) -> Vec<f64> {
        let (lo, hi) = self.ood_eval_ranges[axis];
        let r = self.grid_resolution;
        (0..r)
            .map(|i| lo + (hi - lo) * i as f64 / (r - 1) as f64)
            .collect()
    }

    /// Full evaluation lattice, first axis major, with an OOD flag per cell.
    pub fn eval_grid(&self) -> Vec<(Context, bool)> {
        let axes: Vec<Vec<f64>> = (0..self.dim()).map(|a| self.axis_values(a)).collect();
        let total: usize = axes.iter().map(|a| a.len()).product();
        let mut out = Vec::with_capacity(total);
        for flat in 0..total {
            let mut rem = flat;
            let mut values = alloc::vec![0.0; axes.len()];
            for a in (0..axes.len()).rev() {
                values[a] = axes[a][rem % axes[a].len()];
                rem /= axes[a].len();
            }
            let ctx = Context::new(values);
            let ood = !self.is_ind(&ctx);
            out.push((ctx, ood));
        }
        out
    }

    /// Center of the IND box plus the two IND corners on its main diagonal.
    pub fn checkpoint_eval_contexts(&self) -> Vec<Context> {
        let center = self
            .ind_ranges
            .iter()
            .map(|&(lo, hi)| 0.5 * (lo + hi))
            .collect();
        let low = self.ind_ranges.iter().map(|&(lo, _)| lo).collect();
        let high = self.ind_ranges.iter().map(|&(_, hi)| hi).collect();
        alloc::vec![Context::new(center), Context::new(low), Context::new(high)]
    }
}

/// Uniform choice among a finite set of contexts.
pub fn sample_discrete<'a, R: Rng + ?Sized>(set: &'a [Context], rng: &mut R) -> &'a Context {
    &set[rng.random_range(0..set.len())]
}
