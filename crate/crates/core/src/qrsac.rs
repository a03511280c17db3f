//! Quantile critics and the QR-SAC loss terms.

use alloc::vec::Vec;

use crate::error::{config_err, Result};
use crate::nn::{Grads, LayerSpec, ParameterSet, Sequential, Tape, Tensor};
use crate::real::Real;

pub const OBS_ACTION_ENCODER: &str = "obs_action_encoder";

/// Midpoint quantile levels `(2i - 1) / 2N`, `i = 1..=N`.
pub fn quantile_levels(n: usize) -> Vec<f64> {
    (1..=n)
        .map(|i| (2 * i - 1) as f64 / (2 * n) as f64)
        .collect()
}

/// Return quantiles predicted for one state-action pair.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileEstimate {
    pub values: Vec<f64>,
    pub levels: Vec<f64>,
}

impl QuantileEstimate {
    pub fn new(values: Vec<f64>) -> Self {
        let levels = quantile_levels(values.len());
        Self { values, levels }
    }

    /// Scalar Q: the mean of the quantiles.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CriticDims {
    pub obs: usize,
    pub action: usize,
    /// Zero for critics without context access.
    pub context: usize,
    pub width: usize,
    pub latent: usize,
    pub quantiles: usize,
}

pub struct CriticTape<F> {
    encoder: Tape<F>,
    context: Option<Tape<F>>,
    decision: Tape<F>,
}

/// Distributional critic `Q(o, a[, c]) -> N quantiles`.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticNet {
    pub dims: CriticDims,
    encoder: Sequential,
    context: Option<Sequential>,
    decision: Sequential,
}

impl CriticNet {
    pub fn new(dims: CriticDims) -> Self {
        let w = dims.width;
        let encoder = Sequential::mlp(
            OBS_ACTION_ENCODER,
            &[dims.obs + dims.action, w, w],
            Some(LayerSpec::Relu),
        );
        let context = (dims.context > 0).then(|| {
            Sequential::mlp(
                crate::policy::CONTEXT_ENCODER,
                &[dims.context, dims.latent, dims.latent],
                Some(LayerSpec::Relu),
            )
        });
        let extra = if context.is_some() { dims.latent } else { 0 };
        let decision = Sequential::mlp(
            crate::policy::DECISION,
            &[w + extra, w, w, dims.quantiles],
            None,
        );
        Self {
            dims,
            encoder,
            context,
            decision,
        }
    }

    pub fn uses_context(&self) -> bool {
        self.context.is_some()
    }

    pub fn init<F: Real, R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Result<ParameterSet<F>> {
        let mut p = ParameterSet::new();
        self.encoder.init(&mut p, rng)?;
        if let Some(c) = &self.context {
            c.init(&mut p, rng)?;
        }
        self.decision.init(&mut p, rng)?;
        Ok(p)
    }

    pub fn init_zeros<F: Real>(&self) -> Result<ParameterSet<F>> {
        let mut p = ParameterSet::new();
        self.encoder.init_zeros(&mut p)?;
        if let Some(c) = &self.context {
            c.init_zeros(&mut p)?;
        }
        self.decision.init_zeros(&mut p)?;
        Ok(p)
    }

    fn context_input<'a, F: Real>(
        &self,
        context: Option<&'a Tensor<F>>,
    ) -> Result<Option<&'a Tensor<F>>> {
        match (&self.context, context) {
            (None, _) => Ok(None),
            (Some(_), Some(c)) => Ok(Some(c)),
            (Some(_), None) => Err(config_err!("critic needs the context as input")),
        }
    }

    /// `[batch, quantiles]` for observations `[batch, obs]` and actions
    /// `[batch, action]`.
    pub fn forward<F: Real>(
        &self,
        params: &ParameterSet<F>,
        obs: &Tensor<F>,
        action: &Tensor<F>,
        context: Option<&Tensor<F>>,
    ) -> Result<(Tensor<F>, CriticTape<F>)> {
        let oa = Tensor::concat_last(obs, action)?;
        let (h, enc_tape) = self.encoder.forward(params, &oa)?;
        let (joined, ctx_tape) = match self.context_input(context)? {
            Some(c) => {
                let (z, t) = self
                    .context
                    .as_ref()
                    .expect("context net")
                    .forward(params, c)?;
                (Tensor::concat_last(&h, &z)?, Some(t))
            }
            None => (h, None),
        };
        let (q, dec_tape) = self.decision.forward(params, &joined)?;
        Ok((
            q,
            CriticTape {
                encoder: enc_tape,
                context: ctx_tape,
                decision: dec_tape,
            },
        ))
    }

    pub fn infer<F: Real>(
        &self,
        params: &ParameterSet<F>,
        obs: &Tensor<F>,
        action: &Tensor<F>,
        context: Option<&Tensor<F>>,
    ) -> Result<Tensor<F>> {
        let oa = Tensor::concat_last(obs, action)?;
        let h = self.encoder.infer(params, &oa)?;
        let joined = match self.context_input(context)? {
            Some(c) => {
                let z = self
                    .context
                    .as_ref()
                    .expect("context net")
                    .infer(params, c)?;
                Tensor::concat_last(&h, &z)?
            }
            None => h,
        };
        self.decision.infer(params, &joined)
    }

    /// Back-propagates `d_q` (`[batch, quantiles]`). Parameter gradients are
    /// accumulated when `grads` is given. Returns the gradient w.r.t. the
    /// action input.
    pub fn backward<F: Real>(
        &self,
        params: &ParameterSet<F>,
        tape: CriticTape<F>,
        d_q: &Tensor<F>,
        mut grads: Option<&mut Grads<F>>,
    ) -> Result<Tensor<F>> {
        let d_joined = self
            .decision
            .backward(params, tape.decision, d_q, grads.as_deref_mut())?;
        let d_h = match (&self.context, tape.context) {
            (Some(net), Some(t)) => {
                let (d_h, d_z) = d_joined.split_last(self.dims.width);
                if let Some(g) = grads.as_deref_mut() {
                    net.backward(params, t, &d_z, Some(g))?;
                }
                d_h
            }
            _ => d_joined,
        };
        let d_oa = self.encoder.backward(params, tape.encoder, &d_h, grads)?;
        Ok(d_oa.split_last(self.dims.obs).1)
    }
}

/// Distributional Bellman target for one transition:
/// `y_j = r + gamma * (1 - done) * (q_next_j - alpha * log_prob_next)`.
pub fn critic_target(
    reward: f64,
    done: bool,
    next_quantiles_min: &[f64],
    log_prob_next: f64,
    gamma: f64,
    alpha: f64,
) -> Vec<f64> {
    let cont = if done { 0.0 } else { 1.0 };
    next_quantiles_min
        .iter()
        .map(|&q| reward + gamma * cont * (q - alpha * log_prob_next))
        .collect()
}

/// Huber function `L_kappa(u)` and its derivative.
fn huber(u: f64, kappa: f64) -> (f64, f64) {
    if u.abs() <= kappa {
        (0.5 * u * u, u)
    } else {
        (kappa * (u.abs() - 0.5 * kappa), kappa * u.signum())
    }
}

/// Quantile-Huber loss for a batch.
///
/// `pred` is `[batch, N]`, `targets` is `[batch, M]`. Per sample the loss is
/// the mean over `(i, j)` of `|tau_i - 1{u < 0}| * L_kappa(u) / kappa` with
/// `u = y_j - q_i`; samples are averaged. Returns the loss and `d loss / d pred`.
pub fn quantile_huber_loss<F: Real>(
    pred: &Tensor<F>,
    targets: &Tensor<F>,
    kappa: f64,
) -> Result<(f64, Tensor<F>)> {
    if kappa <= 0.0 {
        return Err(config_err!("huber threshold must be positive, got {kappa}"));
    }
    let batch = pred.rows();
    if targets.rows() != batch {
        return Err(config_err!(
            "prediction batch {} vs target batch {}",
            batch,
            targets.rows()
        ));
    }
    let n = pred.last_dim();
    let m = targets.last_dim();
    let taus = quantile_levels(n);
    let norm = (batch * n * m) as f64;
    let mut total = 0.0;
    let mut grad = Tensor::zeros(pred.shape());
    for b in 0..batch {
        let q = pred.row(b);
        let y = targets.row(b);
        let g = &mut grad.data_mut()[b * n..(b + 1) * n];
        for i in 0..n {
            let qi = q[i].as_f64();
            let mut gi = 0.0;
            for &yj in y {
                let u = yj.as_f64() - qi;
                let w = (taus[i] - if u < 0.0 { 1.0 } else { 0.0 }).abs();
                let (l, dl) = huber(u, kappa);
                total += w * l / kappa;
                gi -= w * dl / kappa;
            }
            g[i] = F::from_f64(gi / norm);
        }
    }
    Ok((total / norm, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn levels_are_midpoints() {
        assert_eq!(quantile_levels(1), vec![0.5]);
        assert_eq!(quantile_levels(4), vec![0.125, 0.375, 0.625, 0.875]);
        let l = quantile_levels(32);
        assert!(l.windows(2).all(|w| w[0] < w[1]));
        assert!(l[0] > 0.0 && l[31] < 1.0);
    }

    #[test]
    fn hand_computed_losses() {
        let (l, _) = quantile_huber_loss(&t(&[1, 1], &[0.0]), &t(&[1, 1], &[1.0]), 1.0).unwrap();
        assert_eq!(l, 0.25);
        let (l, _) = quantile_huber_loss(&t(&[1, 1], &[0.0]), &t(&[1, 1], &[-1.0]), 1.0).unwrap();
        assert_eq!(l, 0.25);
        let (l, g) = quantile_huber_loss(&t(&[1, 1], &[0.7]), &t(&[1, 1], &[0.7]), 1.0).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(g.data(), &[0.0]);
    }

    #[test]
    fn targets() {
        assert_eq!(
            critic_target(2.5, true, &[7.0, -3.0], 0.4, 0.99, 0.01),
            vec![2.5, 2.5]
        );
        assert_eq!(
            critic_target(1.0, false, &[0.0, 0.0], 0.0, 0.99, 0.01),
            vec![1.0, 1.0]
        );
        let y = critic_target(0.0, false, &[1.0, 2.0], 5.0, 0.99, 0.0);
        assert!((y[0] - 0.99).abs() < 1e-15 && (y[1] - 1.98).abs() < 1e-15);
    }

    #[test]
    fn zero_critic_outputs_zero() {
        let net = CriticNet::new(CriticDims {
            obs: 3,
            action: 2,
            context: 2,
            width: 16,
            latent: 8,
            quantiles: 32,
        });
        let p = net.init_zeros::<f64>().unwrap();
        let q = net
            .infer(
                &p,
                &Tensor::full(&[2, 3], 0.3),
                &Tensor::full(&[2, 2], -0.1),
                Some(&Tensor::full(&[2, 2], 1.0)),
            )
            .unwrap();
        assert_eq!(q.shape(), &[2, 32]);
        let est = QuantileEstimate::new(q.row(0).to_vec());
        assert_eq!(est.mean(), 0.0);
        assert!(net
            .infer(
                &p,
                &Tensor::full(&[2, 3], 0.3),
                &Tensor::full(&[2, 2], -0.1),
                None
            )
            .is_err());
    }

    #[test]
    fn quantile_mean_is_arithmetic_mean() {
        let est = QuantileEstimate::new(vec![1.0, 2.0, 6.0]);
        assert_eq!(est.mean(), 3.0);
    }
}
