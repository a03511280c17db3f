//! Isolation forest anomaly scoring and the IND/OOD row splitter.

use alloc::boxed::Box;
use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{config_err, Result};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
/// Harmonic numbers below this are summed exactly.
const EXACT_HARMONIC: usize = 64;

/// `H(i) = 1 + 1/2 + ... + 1/i`.
pub fn harmonic(i: usize) -> f64 {
    if i < EXACT_HARMONIC {
        (1..=i).map(|k| 1.0 / k as f64).sum()
    } else {
        let x = i as f64;
        x.ln() + EULER_GAMMA + 0.5 / x - 1.0 / (12.0 * x * x) + 1.0 / (120.0 * x.powi(4))
    }
}

/// Average path length of an unsuccessful BST search over `n` points.
pub fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => 2.0 * harmonic(n - 1) - 2.0 * (n - 1) as f64 / n as f64,
    }
}

enum Node {
    Leaf {
        size: usize,
    },
    Split {
        axis: usize,
        at: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    fn build<R: Rng + ?Sized>(
        data: &[Vec<f64>],
        rows: Vec<usize>,
        depth: usize,
        limit: usize,
        rng: &mut R,
    ) -> Self {
        if depth >= limit || rows.len() <= 1 {
            return Node::Leaf { size: rows.len() };
        }
        let dims = data[rows[0]].len();
        let ranges: Vec<(usize, f64, f64)> = (0..dims)
            .filter_map(|a| {
                let (lo, hi) = rows
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
                        (lo.min(data[r][a]), hi.max(data[r][a]))
                    });
                (hi > lo).then_some((a, lo, hi))
            })
            .collect();
        if ranges.is_empty() {
            return Node::Leaf { size: rows.len() };
        }
        let (axis, lo, hi) = ranges[rng.random_range(0..ranges.len())];
        let at = rng.random_range(lo..hi);
        let (l, r): (Vec<usize>, Vec<usize>) = rows.into_iter().partition(|&i| data[i][axis] < at);
        Node::Split {
            axis,
            at,
            left: Box::new(Node::build(data, l, depth + 1, limit, rng)),
            right: Box::new(Node::build(data, r, depth + 1, limit, rng)),
        }
    }

    fn path_length(&self, x: &[f64], depth: usize) -> f64 {
        match self {
            Node::Leaf { size } => depth as f64 + average_path_length(*size),
            Node::Split {
                axis,
                at,
                left,
                right,
            } => {
                if x[*axis] < *at {
                    left.path_length(x, depth + 1)
                } else {
                    right.path_length(x, depth + 1)
                }
            }
        }
    }
}

pub struct IsolationForest {
    trees: Vec<Node>,
    subsample: usize,
}

impl IsolationForest {
    pub fn fit<R: Rng + ?Sized>(
        data: &[Vec<f64>],
        trees: usize,
        subsample: usize,
        rng: &mut R,
    ) -> Result<Self> {
        validate(data)?;
        if trees == 0 || subsample < 2 {
            return Err(config_err!(
                "need at least one tree and a subsample of two rows"
            ));
        }
        let psi = subsample.min(data.len());
        let limit = (psi as f64).log2().ceil() as usize;
        let trees = (0..trees)
            .map(|_| {
                let rows = sample(rng, data.len(), psi).into_vec();
                Node::build(data, rows, 0, limit, rng)
            })
            .collect();
        Ok(Self {
            trees,
            subsample: psi,
        })
    }

    /// Anomaly score `2^(-E[h(x)] / c(psi))` in `(0, 1)`.
    pub fn score(&self, x: &[f64]) -> f64 {
        let mean =
            self.trees.iter().map(|t| t.path_length(x, 0)).sum::<f64>() / self.trees.len() as f64;
        (2.0f64).powf(-mean / average_path_length(self.subsample))
    }
}

fn validate(data: &[Vec<f64>]) -> Result<()> {
    let dims = data.first().map_or(0, Vec::len);
    if data.len() < 5 {
        return Err(config_err!(
            "isolation forest needs at least 5 rows, got {}",
            data.len()
        ));
    }
    if dims == 0
        || data
            .iter()
            .any(|r| r.len() != dims || r.iter().any(|v| !v.is_finite()))
    {
        return Err(config_err!(
            "features must be finite rows of equal, nonzero width"
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalySplit {
    pub scores: Vec<f64>,
    pub ood: Vec<bool>,
    pub rho: f64,
}

impl AnomalySplit {
    /// Row indices by decreasing score.
    pub fn ranking(&self) -> Vec<usize> {
        rank(&self.scores)
    }
}

fn rank(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Marks the `ceil(rho * n)` highest-scoring rows as OOD.
pub fn isolation_forest_split<R: Rng + ?Sized>(
    features: &[Vec<f64>],
    rho: f64,
    trees: usize,
    subsample: usize,
    rng: &mut R,
) -> Result<AnomalySplit> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(config_err!("ood fraction must lie in [0, 1], got {rho}"));
    }
    let forest = IsolationForest::fit(features, trees, subsample, rng)?;
    let scores: Vec<f64> = features.iter().map(|x| forest.score(x)).collect();
    // guard against 0.2 * 100 = 20.000000000000004
    let k = ((rho * features.len() as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut ood = alloc::vec![false; features.len()];
    for &i in rank(&scores).iter().take(k) {
        ood[i] = true;
    }
    Ok(AnomalySplit { scores, ood, rho })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn small_path_lengths() {
        assert_eq!(average_path_length(1), 0.0);
        assert_eq!(average_path_length(2), 1.0);
        assert!((average_path_length(3) - (2.0 * 1.5 - 4.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn asymptotic_harmonic_matches_summation() {
        for i in [64usize, 100, 256, 1000] {
            let direct: f64 = (1..=i).map(|k| 1.0 / k as f64).sum();
            assert!((harmonic(i) - direct).abs() < 1e-10, "H({i})");
        }
    }

    #[test]
    fn constant_column_is_skipped() {
        let data: Vec<Vec<f64>> = (0..50).map(|i| alloc::vec![1.0, i as f64]).collect();
        let split = isolation_forest_split(&data, 0.1, 50, 256, &mut stream_rng(0, 0)).unwrap();
        assert_eq!(split.ood.iter().filter(|&&o| o).count(), 5);
        let flat: Vec<Vec<f64>> = (0..10).map(|_| alloc::vec![3.0]).collect();
        let s = isolation_forest_split(&flat, 0.2, 10, 256, &mut stream_rng(0, 0)).unwrap();
        assert!(s.scores.iter().all(|&x| x > 0.0 && x < 1.0));
    }

    #[test]
    fn rejects_bad_input() {
        let few: Vec<Vec<f64>> = (0..4).map(|i| alloc::vec![i as f64]).collect();
        assert!(isolation_forest_split(&few, 0.2, 10, 256, &mut stream_rng(0, 0)).is_err());
        let mut data: Vec<Vec<f64>> = (0..10).map(|i| alloc::vec![i as f64]).collect();
        data[3][0] = f64::NAN;
        assert!(isolation_forest_split(&data, 0.2, 10, 256, &mut stream_rng(0, 0)).is_err());
    }
}
