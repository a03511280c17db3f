//! Stochastic policies: observation encoder, optional conditioner and decision
//! layers.
//!
//! The conditioner is what distinguishes the methods. The expert encodes the
//! privileged context (`context_encoder`, ψ), the adapter encodes the
//! observation-action history (`history_adapter`, φ), the oracle feeds the raw
//! context straight into the decision layers and the observation-only policy
//! has no conditioner at all. Parameter names are prefixed by the sub-network,
//! so `obs_encoder.*` and `decision.*` line up between expert and adapter.

use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use rand::Rng;

use crate::error::{config_err, Result};
use crate::nn::{Grads, LayerSpec, NameFilter, ParameterSet, Sequential, Tape, Tensor};
use crate::real::Real;

pub const OBS_ENCODER: &str = "obs_encoder";
pub const CONTEXT_ENCODER: &str = "context_encoder";
pub const HISTORY_ADAPTER: &str = "history_adapter";
pub const DECISION: &str = "decision";

/// Entries shared between expert and adapter.
pub fn shared_filter() -> NameFilter {
    NameFilter::new(&["obs_encoder.*", "decision.*"])
}

/// Guard inside `log(1 - tanh(u)^2 + eps)`.
pub const TANH_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Conditioning {
    None,
    ContextEncoder,
    HistoryAdapter,
    RawContext,
}

/// Layer widths of a policy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyDims {
    pub obs: usize,
    pub action: usize,
    pub context: usize,
    pub history_len: usize,
    /// Width of the observation encoder and decision layers.
    pub width: usize,
    /// Width of the context encoder and of the latent `z`.
    pub latent: usize,
    /// Per-step embedding width of the history adapter.
    pub history_embed: usize,
    pub conv_channels: usize,
}

impl PolicyDims {
    /// Desk-scale widths: 256 / 32.
    pub fn desk(obs: usize, action: usize, context: usize, history_len: usize) -> Self {
        Self {
            obs,
            action,
            context,
            history_len,
            width: 256,
            latent: 32,
            history_embed: 32,
            conv_channels: 32,
        }
    }

    /// Full-size widths: 2048 / 64.
    pub fn full_scale(obs: usize, action: usize, context: usize, history_len: usize) -> Self {
        Self {
            obs,
            action,
            context,
            history_len,
            width: 2048,
            latent: 64,
            history_embed: 64,
            conv_channels: 32,
        }
    }

    pub fn pair_dim(&self) -> usize {
        self.obs + self.action
    }

    /// Length of the history adapter's conv stack output.
    pub fn conv_len(&self) -> usize {
        self.history_len.div_ceil(4)
    }
}

/// Mapping from the tanh output layer to mean and log-std.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadConfig {
    /// Pre-squash mean is `mean_scale * tanh(..)`.
    pub mean_scale: f64,
    pub log_std_min: f64,
    pub log_std_max: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            mean_scale: 3.0,
            log_std_min: (1e-3f64).ln(),
            log_std_max: (10.0f64).ln(),
        }
    }
}

/// Inputs a policy may consume. Which ones are required depends on its
/// [`Conditioning`].
#[derive(Debug, Clone, Copy)]
pub struct PolicyInputs<'a, F> {
    /// `[batch, obs]`
    pub obs: &'a Tensor<F>,
    /// `[batch, context]`
    pub context: Option<&'a Tensor<F>>,
    /// `[batch, history_len, obs + action]`
    pub history: Option<&'a Tensor<F>>,
}

#[derive(Debug, Clone)]
pub struct PolicyOutput<F> {
    /// Pre-squash mean, `[batch, action]`.
    pub mean: Tensor<F>,
    pub log_std: Tensor<F>,
    /// `z` for the expert, `ẑ` for the adapter.
    pub latent: Option<Tensor<F>>,
}

pub struct PolicyTape<F> {
    obs: Tape<F>,
    cond: Option<Tape<F>>,
    decision: Tape<F>,
    /// Decision output after tanh.
    head: Tensor<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub conditioning: Conditioning,
    pub dims: PolicyDims,
    pub head: HeadConfig,
    obs_encoder: Sequential,
    conditioner: Option<Sequential>,
    decision: Sequential,
}

impl PolicyNet {
    pub fn new(conditioning: Conditioning, dims: PolicyDims, head: HeadConfig) -> Self {
        let w = dims.width;
        let obs_encoder = Sequential::mlp(OBS_ENCODER, &[dims.obs, w, w], Some(LayerSpec::Relu));
        let (conditioner, extra) = match conditioning {
            Conditioning::None => (None, 0),
            Conditioning::RawContext => (None, dims.context),
            Conditioning::ContextEncoder => (
                Some(Sequential::mlp(
                    CONTEXT_ENCODER,
                    &[dims.context, dims.latent, dims.latent],
                    Some(LayerSpec::Relu),
                )),
                dims.latent,
            ),
            Conditioning::HistoryAdapter => (Some(history_adapter(&dims)), dims.latent),
        };
        let decision = Sequential::mlp(
            DECISION,
            &[w + extra, w, w, 2 * dims.action],
            Some(LayerSpec::Tanh),
        );
        Self {
            conditioning,
            dims,
            head,
            obs_encoder,
            conditioner,
            decision,
        }
    }

    pub fn expert(dims: PolicyDims) -> Self {
        Self::new(Conditioning::ContextEncoder, dims, HeadConfig::default())
    }

    pub fn adapter(dims: PolicyDims) -> Self {
        Self::new(Conditioning::HistoryAdapter, dims, HeadConfig::default())
    }

    pub fn obs_encoder(&self) -> &Sequential {
        &self.obs_encoder
    }

    pub fn conditioner(&self) -> Option<&Sequential> {
        self.conditioner.as_ref()
    }

    pub fn decision(&self) -> &Sequential {
        &self.decision
    }

    /// Input width of the first decision layer.
    pub fn decision_inputs(&self) -> usize {
        match self.decision.layers()[0] {
            LayerSpec::Dense { inputs, .. } => inputs,
            _ => unreachable!("decision stack starts with a dense layer"),
        }
    }

    pub fn uses_context(&self) -> bool {
        matches!(
            self.conditioning,
            Conditioning::ContextEncoder | Conditioning::RawContext
        )
    }

    pub fn uses_history(&self) -> bool {
        self.conditioning == Conditioning::HistoryAdapter
    }

    pub fn init<F: Real, R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParameterSet<F>> {
        let mut p = ParameterSet::new();
        self.obs_encoder.init(&mut p, rng)?;
        if let Some(c) = &self.conditioner {
            c.init(&mut p, rng)?;
        }
        self.decision.init(&mut p, rng)?;
        Ok(p)
    }

    pub fn init_zeros<F: Real>(&self) -> Result<ParameterSet<F>> {
        let mut p = ParameterSet::new();
        self.obs_encoder.init_zeros(&mut p)?;
        if let Some(c) = &self.conditioner {
            c.init_zeros(&mut p)?;
        }
        self.decision.init_zeros(&mut p)?;
        Ok(p)
    }

    fn conditioner_input<'a, F: Real>(
        &self,
        inputs: &PolicyInputs<'a, F>,
    ) -> Result<Option<&'a Tensor<F>>> {
        match self.conditioning {
            Conditioning::None => Ok(None),
            Conditioning::ContextEncoder | Conditioning::RawContext => inputs
                .context
                .map(Some)
                .ok_or_else(|| config_err!("policy needs the context as input")),
            Conditioning::HistoryAdapter => {
                let h = inputs
                    .history
                    .ok_or_else(|| config_err!("policy needs the history as input"))?;
                let expected = [self.dims.history_len, self.dims.pair_dim()];
                if h.shape().len() != 3 || h.shape()[1..] != expected {
                    return Err(config_err!(
                        "history window has shape {:?}, expected [batch, {}, {}]",
                        h.shape(),
                        expected[0],
                        expected[1]
                    ));
                }
                Ok(Some(h))
            }
        }
    }

    /// Latent code of the conditioner alone: `ψ(c)` or `φ(h)`.
    pub fn encode<F: Real>(
        &self,
        params: &ParameterSet<F>,
        inputs: &PolicyInputs<'_, F>,
    ) -> Result<Option<(Tensor<F>, Tape<F>)>> {
        let Some(net) = &self.conditioner else {
            return Ok(None);
        };
        let x = self.conditioner_input(inputs)?.expect("conditioner input");
        net.forward(params, x).map(Some)
    }

    /// Back-propagates a latent gradient into the conditioner's parameters.
    pub fn backward_encode<F: Real>(
        &self,
        params: &ParameterSet<F>,
        tape: Tape<F>,
        d_latent: &Tensor<F>,
        grads: &mut Grads<F>,
    ) -> Result<()> {
        let net = self
            .conditioner
            .as_ref()
            .ok_or_else(|| config_err!("policy has no conditioner"))?;
        net.backward(params, tape, d_latent, Some(grads))
            .map(|_| ())
    }

    pub fn forward<F: Real>(
        &self,
        params: &ParameterSet<F>,
        inputs: &PolicyInputs<'_, F>,
    ) -> Result<(PolicyOutput<F>, PolicyTape<F>)> {
        let (ell, obs_tape) = self.obs_encoder.forward(params, inputs.obs)?;
        let (extra, cond_tape, latent) = match self.conditioning {
            Conditioning::None => (None, None, None),
            Conditioning::RawContext => {
                let c = self.conditioner_input(inputs)?.expect("context");
                (Some(c.clone()), None, None)
            }
            _ => {
                let (z, tape) = self.encode(params, inputs)?.expect("conditioner");
                (Some(z.clone()), Some(tape), Some(z))
            }
        };
        let joined = match &extra {
            Some(e) => Tensor::concat_last(&ell, e)?,
            None => ell,
        };
        let (head, decision_tape) = self.decision.forward(params, &joined)?;
        let (mean, log_std) = self.split_head(&head);
        Ok((
            PolicyOutput {
                mean,
                log_std,
                latent,
            },
            PolicyTape {
                obs: obs_tape,
                cond: cond_tape,
                decision: decision_tape,
                head,
            },
        ))
    }

    pub fn infer<F: Real>(
        &self,
        params: &ParameterSet<F>,
        inputs: &PolicyInputs<'_, F>,
    ) -> Result<PolicyOutput<F>> {
        let latent = match self.conditioning {
            Conditioning::None => None,
            Conditioning::RawContext => self.conditioner_input(inputs)?.cloned(),
            _ => {
                let x = self.conditioner_input(inputs)?.expect("conditioner input");
                Some(
                    self.conditioner
                        .as_ref()
                        .expect("conditioner")
                        .infer(params, x)?,
                )
            }
        };
        let mut out = self.decide(params, inputs.obs, latent.as_ref())?;
        if self.conditioning != Conditioning::RawContext {
            out.latent = latent;
        }
        Ok(out)
    }

    /// Runs the observation encoder and decision layers with an externally
    /// supplied latent (or raw context) in place of the conditioner output.
    pub fn decide<F: Real>(
        &self,
        params: &ParameterSet<F>,
        obs: &Tensor<F>,
        latent: Option<&Tensor<F>>,
    ) -> Result<PolicyOutput<F>> {
        let ell = self.obs_encoder.infer(params, obs)?;
        let joined = match latent {
            Some(z) => Tensor::concat_last(&ell, z)?,
            None => ell,
        };
        let head = self.decision.infer(params, &joined)?;
        let (mean, log_std) = self.split_head(&head);
        Ok(PolicyOutput {
            mean,
            log_std,
            latent: latent.cloned(),
        })
    }

    fn split_head<F: Real>(&self, head: &Tensor<F>) -> (Tensor<F>, Tensor<F>) {
        let (mut mean, mut log_std) = head.split_last(self.dims.action);
        let scale = F::from_f64(self.head.mean_scale);
        mean.scale(scale);
        let lo = F::from_f64(self.head.log_std_min);
        let half_span = F::from_f64(0.5 * (self.head.log_std_max - self.head.log_std_min));
        for v in log_std.data_mut() {
            *v = lo + (*v + F::one()) * half_span;
        }
        (mean, log_std)
    }

    /// Back-propagates gradients w.r.t. mean and log-std into every
    /// parameter of the policy (conditioner included).
    pub fn backward<F: Real>(
        &self,
        params: &ParameterSet<F>,
        tape: PolicyTape<F>,
        d_mean: &Tensor<F>,
        d_log_std: &Tensor<F>,
        grads: &mut Grads<F>,
    ) -> Result<()> {
        let scale = F::from_f64(self.head.mean_scale);
        let half_span = F::from_f64(0.5 * (self.head.log_std_max - self.head.log_std_min));
        let mut dm = d_mean.clone();
        dm.scale(scale);
        let mut ds = d_log_std.clone();
        ds.scale(half_span);
        let d_head = Tensor::concat_last(&dm, &ds)?;
        debug_assert_eq!(d_head.shape(), tape.head.shape());
        let d_joined = self
            .decision
            .backward(params, tape.decision, &d_head, Some(grads))?;
        let w = self.dims.width;
        let d_ell = if self.conditioning == Conditioning::None {
            d_joined
        } else {
            let (d_ell, d_latent) = d_joined.split_last(w);
            if let Some(cond_tape) = tape.cond {
                let net = self.conditioner.as_ref().expect("conditioner");
                net.backward(params, cond_tape, &d_latent, Some(grads))?;
            }
            d_ell
        };
        self.obs_encoder
            .backward(params, tape.obs, &d_ell, Some(grads))?;
        Ok(())
    }
}

fn history_adapter(dims: &PolicyDims) -> Sequential {
    let (e, c) = (dims.history_embed, dims.conv_channels);
    Sequential::new(
        HISTORY_ADAPTER,
        alloc::vec![
            LayerSpec::dense(dims.pair_dim(), e),
            LayerSpec::Relu,
            LayerSpec::conv1d(e, c, 8, 4),
            LayerSpec::Relu,
            LayerSpec::conv1d(c, c, 5, 1),
            LayerSpec::Relu,
            LayerSpec::conv1d(c, c, 5, 1),
            LayerSpec::Relu,
            LayerSpec::Flatten,
            LayerSpec::dense(c * dims.conv_len(), dims.latent),
            LayerSpec::Relu,
        ],
    )
}

/// Action for one observation: `tanh(mean + exp(log_std) * eps)`, or
/// `tanh(mean)` when `deterministic`.
pub fn sample_action<F: Real, R: Rng + ?Sized>(
    mean: &[F],
    log_std: &[F],
    rng: &mut R,
    deterministic: bool,
) -> Vec<f64> {
    mean.iter()
        .zip(log_std)
        .map(|(&m, &ls)| {
            let m = m.as_f64();
            if deterministic {
                m.tanh()
            } else {
                let eps = crate::rng::normal(rng);
                (m + ls.as_f64().exp() * eps).tanh()
            }
        })
        .collect()
}

/// Log-density of a tanh-squashed diagonal Gaussian sample, given the
/// standard-normal draws `eps` that produced it.
pub fn squashed_log_prob(eps: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    let half_ln_2pi = 0.5 * (core::f64::consts::TAU).ln();
    eps.iter()
        .zip(log_std)
        .zip(action)
        .map(|((&e, &ls), &a)| -0.5 * e * e - ls - half_ln_2pi - (1.0 - a * a + TANH_EPS).ln())
        .sum()
}

/// Mean squared error between the expert latent `z` and the adapter latent
/// `ẑ`, averaged over batch and latent axes. Returns the loss and its
/// gradient w.r.t. `ẑ`; `z` is a constant.
pub fn adapter_loss<F: Real>(z: &Tensor<F>, z_hat: &Tensor<F>) -> Result<(F, Tensor<F>)> {
    if z.shape() != z_hat.shape() {
        return Err(config_err!(
            "latent shapes differ: {:?} vs {:?}",
            z.shape(),
            z_hat.shape()
        ));
    }
    let n = F::from_f64(z.len() as f64);
    let two = F::from_f64(2.0);
    let mut grad = Tensor::zeros(z.shape());
    let mut loss = F::zero();
    for ((g, &a), &b) in grad.data_mut().iter_mut().zip(z.data()).zip(z_hat.data()) {
        let d = b - a;
        loss += d * d;
        *g = two * d / n;
    }
    Ok((loss / n, grad))
}
