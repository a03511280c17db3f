//! Central finite-difference gradient checking.
//!
//! The check only calls [`Sequential::infer`]/[`Sequential::forward`]; it never
//! looks at the analytic path except to compare against it.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::Result;
use crate::nn::layers::Sequential;
use crate::nn::params::{Grads, ParameterSet};
use crate::nn::tensor::Tensor;

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    /// Max relative error per parameter tensor.
    pub params: BTreeMap<String, f64>,
    /// Max relative error of the input gradient.
    pub input: f64,
    /// Coordinates skipped because the perturbation flipped a ReLU.
    pub kinks_skipped: usize,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.params.values().copied().fold(self.input, f64::max)
    }
}

/// Below this magnitude gradients are compared in absolute terms: central
/// differences at `eps = 1e-5` carry round-off of roughly `1e-11`.
pub const ABSOLUTE_FLOOR: f64 = 1e-8;

/// `|a - n| / max(|a|, |n|)`, or `|a - n|` when both are below
/// [`ABSOLUTE_FLOOR`].
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < ABSOLUTE_FLOOR {
        (analytic - numeric).abs()
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Fixed readout weights turning the network output into a scalar.
fn readout(n: usize) -> Vec<f64> {
    use num_traits::Float;
    (0..n)
        .map(|k| 0.3 + Float::cos(0.7 * k as f64 + 0.1))
        .collect()
}

fn objective(
    net: &Sequential,
    params: &ParameterSet<f64>,
    x: &Tensor<f64>,
) -> Result<(f64, Vec<bool>)> {
    let (y, tape) = net.forward(params, x)?;
    let w = readout(y.len());
    let value = y.data().iter().zip(&w).map(|(a, b)| a * b).sum();
    Ok((value, tape.relu_pattern()))
}

/// Compares analytic gradients of `sum_k w_k * net(x)_k` against central
/// differences with step `eps`.
pub fn grad_check(
    net: &Sequential,
    params: &ParameterSet<f64>,
    x: &Tensor<f64>,
    eps: f64,
) -> Result<GradCheckReport> {
    let (y, tape) = net.forward(params, x)?;
    let base_pattern = tape.relu_pattern();
    let upstream = Tensor::new(y.shape().to_vec(), readout(y.len()))?;
    let mut grads = Grads::new();
    let dx = net.backward(params, tape, &upstream, Some(&mut grads))?;

    let mut report = GradCheckReport::default();
    let names: Vec<String> = params.names().map(String::from).collect();
    for name in names {
        let analytic = grads.get(&name);
        let n = params.get(&name)?.len();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let mut plus = params.clone();
            plus.get_mut(&name)?.data_mut()[i] += eps;
            let mut minus = params.clone();
            minus.get_mut(&name)?.data_mut()[i] -= eps;
            let (fp, pp) = objective(net, &plus, x)?;
            let (fm, pm) = objective(net, &minus, x)?;
            if pp != base_pattern || pm != base_pattern {
                report.kinks_skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * eps);
            let a = analytic.map_or(0.0, |g| g.data()[i]);
            worst = worst.max(relative_error(a, numeric));
        }
        report.params.insert(name, worst);
    }

    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[i] += eps;
        let mut xm = x.clone();
        xm.data_mut()[i] -= eps;
        let (fp, pp) = objective(net, params, &xp)?;
        let (fm, pm) = objective(net, params, &xm)?;
        if pp != base_pattern || pm != base_pattern {
            report.kinks_skipped += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * eps);
        worst = worst.max(relative_error(dx.data()[i], numeric));
    }
    report.input = worst;
    Ok(report)
}
