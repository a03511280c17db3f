//! Per-method network bundles and the learner update.
//!
//! An [`Agent`] owns every network a method trains: the actor (the expert for
//! SPARC/RMA, the policy itself for the baselines), the optional history
//! adapter, two quantile critics and their Polyak targets. One
//! [`Agent::update_step`] performs, in order: critic update, actor update,
//! adapter regression, target blend and the expert-to-adapter copy.

use alloc::string::String;
use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use rand::Rng;

use crate::error::{config_err, Error, Result};
use crate::nn::{clip_global_norm, AdamConfig, Grads, ParameterSet, Tensor};
use crate::policy::{
    adapter_loss, shared_filter, Conditioning, PolicyDims, PolicyInputs, PolicyNet, TANH_EPS,
};
use crate::qrsac::{quantile_huber_loss, CriticDims, CriticNet};
use crate::real::Real;
use crate::replay::Batch;
use crate::rng::{normal, stream, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Sparc,
    Rma,
    OnlyObs,
    HistoryInput,
    Oracle,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::OnlyObs,
        Method::HistoryInput,
        Method::Rma,
        Method::Sparc,
        Method::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Sparc => "sparc",
            Method::Rma => "rma",
            Method::OnlyObs => "only_obs",
            Method::HistoryInput => "history_input",
            Method::Oracle => "oracle",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn contract(self) -> MethodInputContract {
        let (o, h, c) = (true, true, true);
        let set = |obs, history, context| InputSet {
            obs,
            history,
            context,
        };
        match self {
            Method::OnlyObs => MethodInputContract {
                train: set(o, false, false),
                test: set(o, false, false),
            },
            Method::HistoryInput => MethodInputContract {
                train: set(o, h, false),
                test: set(o, h, false),
            },
            Method::Rma | Method::Sparc => MethodInputContract {
                train: set(o, h, c),
                test: set(o, h, false),
            },
            Method::Oracle => MethodInputContract {
                train: set(o, false, c),
                test: set(o, false, c),
            },
        }
    }

    fn actor_conditioning(self) -> Conditioning {
        match self {
            Method::Sparc | Method::Rma => Conditioning::ContextEncoder,
            Method::OnlyObs => Conditioning::None,
            Method::HistoryInput => Conditioning::HistoryAdapter,
            Method::Oracle => Conditioning::RawContext,
        }
    }

    fn has_adapter(self) -> bool {
        matches!(self, Method::Sparc | Method::Rma)
    }

    fn critic_sees_context(self) -> bool {
        self.contract().train.context
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputSet {
    pub obs: bool,
    pub history: bool,
    pub context: bool,
}

/// Inputs a method may use during training and at test time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MethodInputContract {
    pub train: InputSet,
    pub test: InputSet,
}

/// Learner hyperparameters; defaults are the MuJoCo-scale values.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyper {
    pub batch_size: usize,
    pub history_len: usize,
    pub lr_adapter: f64,
    pub lr_sac: f64,
    pub tau: f64,
    pub critic_clip: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub quantiles: usize,
    pub kappa: f64,
    /// Copy expert layers into the adapter every this many updates.
    pub copy_every: u64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            batch_size: 32,
            history_len: 50,
            lr_adapter: 3e-4,
            lr_sac: 3e-4,
            tau: 0.005,
            critic_clip: 10.0,
            gamma: 0.99,
            alpha: 0.01,
            quantiles: 32,
            kappa: 1.0,
            copy_every: 1,
        }
    }
}

/// Which policy acts or is being addressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Actor,
    Adapter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdatePhase {
    Critic,
    Actor,
    Adapter,
    Targets,
    Copy,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdateReport {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub adapter_loss: Option<f64>,
    /// `-E[log pi]` of the reparameterized actor sample.
    pub entropy: f64,
    pub critic_grad_norm: f64,
    /// Adam step count of the actor when the adapter regression read `ψ`.
    pub regression_actor_step: Option<u64>,
    pub skipped: bool,
    pub skip_reason: Option<String>,
}

/// A policy network with one fixed parameter version, ready to act.
#[derive(Debug, Clone)]
pub struct ActingPolicy<F> {
    pub net: PolicyNet,
    pub params: ParameterSet<F>,
}

impl<F: Real> ActingPolicy<F> {
    /// Action for a single observation. `context` is only read by policies
    /// that are built to consume it.
    pub fn act<R: Rng + ?Sized>(
        &self,
        obs: &[f64],
        window: &[f32],
        context: Option<&[f64]>,
        rng: &mut R,
        deterministic: bool,
    ) -> Result<Vec<f64>> {
        let dims = &self.net.dims;
        let o = Tensor::new(
            alloc::vec![1, obs.len()],
            obs.iter().map(|&v| F::from_f64(v)).collect(),
        )?;
        let c = if self.net.uses_context() {
            let c = context.ok_or_else(|| config_err!("policy needs the context, none given"))?;
            Some(Tensor::new(
                alloc::vec![1, c.len()],
                c.iter().map(|&v| F::from_f64(v)).collect(),
            )?)
        } else {
            None
        };
        let h = if self.net.uses_history() {
            Some(Tensor::new(
                alloc::vec![1, dims.history_len, dims.pair_dim()],
                window.iter().map(|&v| F::from_f64(v as f64)).collect(),
            )?)
        } else {
            None
        };
        let out = self.net.infer(
            &self.params,
            &PolicyInputs {
                obs: &o,
                context: c.as_ref(),
                history: h.as_ref(),
            },
        )?;
        Ok(crate::policy::sample_action(
            out.mean.data(),
            out.log_std.data(),
            rng,
            deterministic,
        ))
    }
}

#[derive(Debug, Clone)]
pub struct Agent<F> {
    pub method: Method,
    pub hyper: Hyper,
    pub dims: PolicyDims,
    pub actor_net: PolicyNet,
    pub actor: ParameterSet<F>,
    pub adapter_net: Option<PolicyNet>,
    pub adapter: Option<ParameterSet<F>>,
    pub critic_net: CriticNet,
    pub critics: [ParameterSet<F>; 2],
    pub targets: [ParameterSet<F>; 2],
    /// Whether `update_step` runs the adapter regression and copy (SPARC).
    pub train_adapter: bool,
    pub updates: u64,
    pub skipped: u64,
}

impl<F: Real> Agent<F> {
    /// Builds and initializes every network of `method` from `seed`.
    ///
    /// Networks are initialized in a fixed order (actor, adapter, critics)
    /// from a dedicated stream, so methods sharing an architecture start from
    /// identical weights.
    pub fn new(method: Method, dims: PolicyDims, hyper: Hyper, seed: u64) -> Result<Self> {
        if hyper.history_len != dims.history_len {
            return Err(config_err!(
                "history length {} in hyperparameters vs {} in dims",
                hyper.history_len,
                dims.history_len
            ));
        }
        if hyper.batch_size == 0 || hyper.quantiles == 0 {
            return Err(config_err!(
                "batch size and quantile count must be positive"
            ));
        }
        let mut rng = stream_rng(seed, stream::INIT);
        let actor_net = PolicyNet::new(
            method.actor_conditioning(),
            dims.clone(),
            Default::default(),
        );
        let actor = actor_net.init(&mut rng)?;
        let (adapter_net, adapter) = if method.has_adapter() {
            let net = PolicyNet::adapter(dims.clone());
            let mut params: ParameterSet<F> = net.init(&mut rng)?;
            params.copy_entries(&actor, &shared_filter())?;
            (Some(net), Some(params))
        } else {
            (None, None)
        };
        let critic_net = CriticNet::new(CriticDims {
            obs: dims.obs,
            action: dims.action,
            context: if method.critic_sees_context() {
                dims.context
            } else {
                0
            },
            width: dims.width,
            latent: dims.latent,
            quantiles: hyper.quantiles,
        });
        let c1 = critic_net.init(&mut rng)?;
        let c2 = critic_net.init(&mut rng)?;
        let targets = [c1.clone(), c2.clone()];
        Ok(Self {
            method,
            hyper,
            dims,
            actor_net,
            actor,
            adapter_net,
            adapter,
            critic_net,
            critics: [c1, c2],
            targets,
            train_adapter: method == Method::Sparc,
            updates: 0,
            skipped: 0,
        })
    }

    /// The policy deployed at test time.
    pub fn deploy_role(&self) -> Role {
        if self.method.has_adapter() {
            Role::Adapter
        } else {
            Role::Actor
        }
    }

    pub fn acting_policy(&self, role: Role) -> Result<ActingPolicy<F>> {
        match role {
            Role::Actor => Ok(ActingPolicy {
                net: self.actor_net.clone(),
                params: self.actor.clone(),
            }),
            Role::Adapter => match (&self.adapter_net, &self.adapter) {
                (Some(net), Some(params)) => Ok(ActingPolicy {
                    net: net.clone(),
                    params: params.clone(),
                }),
                _ => Err(config_err!("{} has no adapter policy", self.method.name())),
            },
        }
    }

    pub fn params(&self, role: Role) -> Option<&ParameterSet<F>> {
        match role {
            Role::Actor => Some(&self.actor),
            Role::Adapter => self.adapter.as_ref(),
        }
    }

    /// Copies observation encoder and decision layers from the actor into
    /// the adapter.
    pub fn sync_adapter(&mut self) -> Result<()> {
        if let Some(adapter) = self.adapter.as_mut() {
            adapter.copy_entries(&self.actor, &shared_filter())?;
        }
        Ok(())
    }

    fn actor_inputs<'a>(
        &self,
        obs: &'a Tensor<F>,
        context: &'a Tensor<F>,
        history: Option<&'a Tensor<F>>,
    ) -> PolicyInputs<'a, F> {
        PolicyInputs {
            obs,
            context: self.actor_net.uses_context().then_some(context),
            history: if self.actor_net.uses_history() {
                history
            } else {
                None
            },
        }
    }

    fn critic_context<'a>(&self, context: &'a Tensor<F>) -> Option<&'a Tensor<F>> {
        self.critic_net.uses_context().then_some(context)
    }

    pub fn update_step<R: Rng + ?Sized>(
        &mut self,
        batch: &Batch<F>,
        rng: &mut R,
    ) -> Result<UpdateReport> {
        self.update_step_observed(batch, rng, &mut |_, _| {})
    }

    /// [`Agent::update_step`] with a callback after every phase.
    pub fn update_step_observed<R: Rng + ?Sized>(
        &mut self,
        batch: &Batch<F>,
        rng: &mut R,
        observer: &mut dyn FnMut(UpdatePhase, &Self),
    ) -> Result<UpdateReport> {
        let mut report = UpdateReport::default();
        match self.try_update(batch, rng, observer, &mut report) {
            Ok(()) => {}
            Err(Error::Training(msg)) => {
                self.skipped += 1;
                report.skipped = true;
                report.skip_reason = Some(msg);
            }
            Err(e) => return Err(e),
        }
        self.updates += 1;
        Ok(report)
    }

    fn try_update<R: Rng + ?Sized>(
        &mut self,
        batch: &Batch<F>,
        rng: &mut R,
        observer: &mut dyn FnMut(UpdatePhase, &Self),
        report: &mut UpdateReport,
    ) -> Result<()> {
        let sac = AdamConfig::with_lr(self.hyper.lr_sac);

        let (critic_loss, norm) = self.critic_update(batch, rng, &sac)?;
        report.critic_loss = critic_loss;
        report.critic_grad_norm = norm;
        observer(UpdatePhase::Critic, self);

        let (actor_loss, entropy) = self.actor_update(batch, rng, &sac)?;
        report.actor_loss = actor_loss;
        report.entropy = entropy;
        observer(UpdatePhase::Actor, self);

        if self.train_adapter && self.adapter.is_some() {
            report.regression_actor_step = Some(self.actor.step());
            report.adapter_loss = Some(self.adapter_regression(batch)?);
            observer(UpdatePhase::Adapter, self);
        }

        for (target, online) in self.targets.iter_mut().zip(&self.critics) {
            target.polyak_blend(online, self.hyper.tau)?;
        }
        observer(UpdatePhase::Targets, self);

        if self.train_adapter && (self.updates + 1) % self.hyper.copy_every.max(1) == 0 {
            self.sync_adapter()?;
            observer(UpdatePhase::Copy, self);
        }
        Ok(())
    }

    /// Reparameterized actor sample for a batch: returns the policy tape
    /// pieces needed for backward together with actions and log-probs.
    fn sample_actor(
        &self,
        obs: &Tensor<F>,
        context: &Tensor<F>,
        history: Option<&Tensor<F>>,
        rng: &mut (impl Rng + ?Sized),
        record: bool,
    ) -> Result<ActorSample<F>> {
        let inputs = self.actor_inputs(obs, context, history);
        let (out, tape) = if record {
            let (o, t) = self.actor_net.forward(&self.actor, &inputs)?;
            (o, Some(t))
        } else {
            (self.actor_net.infer(&self.actor, &inputs)?, None)
        };
        let (b, a) = (out.mean.rows(), self.dims.action);
        let mut eps = Vec::with_capacity(b * a);
        let mut action = Vec::with_capacity(b * a);
        let mut log_prob = alloc::vec![0.0; b];
        let half_ln_2pi = 0.5 * core::f64::consts::TAU.ln();
        for r in 0..b {
            for k in 0..a {
                let m = out.mean.data()[r * a + k].as_f64();
                let ls = out.log_std.data()[r * a + k].as_f64();
                let e = normal(rng);
                let act = (m + ls.exp() * e).tanh();
                log_prob[r] += -0.5 * e * e - ls - half_ln_2pi - (1.0 - act * act + TANH_EPS).ln();
                eps.push(e);
                action.push(act);
            }
        }
        let action = Tensor::new(
            alloc::vec![b, a],
            action.iter().map(|&v| F::from_f64(v)).collect(),
        )?;
        Ok(ActorSample {
            log_std: out.log_std,
            tape,
            eps,
            action,
            log_prob,
        })
    }

    fn critic_update(
        &mut self,
        batch: &Batch<F>,
        rng: &mut (impl Rng + ?Sized),
        cfg: &AdamConfig,
    ) -> Result<(f64, f64)> {
        let (total, mut grads) = self.critic_loss_and_grads(batch, rng)?;
        let [g1, g2] = &mut grads;
        let norm = clip_global_norm(&mut [g1, g2], F::from_f64(self.hyper.critic_clip)).as_f64();
        if !norm.is_finite() {
            return Err(Error::Training("non-finite critic gradient".into()));
        }
        self.critics[0].adam_step(&grads[0], cfg)?;
        self.critics[1].adam_step(&grads[1], cfg)?;
        Ok((total, norm))
    }

    /// Summed quantile-Huber loss of both critics against the twin-min
    /// distributional target, with unclipped gradients per critic.
    pub fn critic_loss_and_grads<R: Rng + ?Sized>(
        &self,
        batch: &Batch<F>,
        rng: &mut R,
    ) -> Result<(f64, [Grads<F>; 2])> {
        let b = batch.len();
        let n = self.hyper.quantiles;
        let next = self.sample_actor(
            &batch.next_obs,
            &batch.context,
            batch.next_history.as_ref(),
            rng,
            false,
        )?;
        let ctx = self.critic_context(&batch.context);
        let q1 = self
            .critic_net
            .infer(&self.targets[0], &batch.next_obs, &next.action, ctx)?;
        let q2 = self
            .critic_net
            .infer(&self.targets[1], &batch.next_obs, &next.action, ctx)?;
        let mut y = Vec::with_capacity(b * n);
        for r in 0..b {
            let cont = if batch.terminal[r] { 0.0 } else { 1.0 };
            for j in 0..n {
                let qmin = q1.data()[r * n + j].min(q2.data()[r * n + j]).as_f64();
                let v = batch.reward[r]
                    + self.hyper.gamma * cont * (qmin - self.hyper.alpha * next.log_prob[r]);
                y.push(F::from_f64(v));
            }
        }
        let targets = Tensor::new(alloc::vec![b, n], y)?;
        if !targets.is_finite() {
            return Err(Error::Training("non-finite critic targets".into()));
        }

        let mut total = 0.0;
        let mut grads: [Grads<F>; 2] = [Grads::new(), Grads::new()];
        for k in 0..2 {
            let (pred, tape) =
                self.critic_net
                    .forward(&self.critics[k], &batch.obs, &batch.action, ctx)?;
            let (loss, d_pred) = quantile_huber_loss(&pred, &targets, self.hyper.kappa)?;
            if !loss.is_finite() {
                return Err(Error::Training("non-finite critic loss".into()));
            }
            total += loss;
            self.critic_net
                .backward(&self.critics[k], tape, &d_pred, Some(&mut grads[k]))?;
        }
        Ok((total, grads))
    }

    fn actor_update(
        &mut self,
        batch: &Batch<F>,
        rng: &mut (impl Rng + ?Sized),
        cfg: &AdamConfig,
    ) -> Result<(f64, f64)> {
        let (loss, entropy, grads) = self.actor_loss_and_grads(batch, rng)?;
        self.actor.adam_step(&grads, cfg)?;
        Ok((loss, entropy))
    }

    /// Entropy-regularized actor loss on a reparameterized sample, its
    /// entropy estimate and the actor gradients. Critic parameters get no
    /// gradient; only the action path through them is used.
    pub fn actor_loss_and_grads<R: Rng + ?Sized>(
        &self,
        batch: &Batch<F>,
        rng: &mut R,
    ) -> Result<(f64, f64, Grads<F>)> {
        let (b, a, n) = (batch.len(), self.dims.action, self.hyper.quantiles);
        let alpha = self.hyper.alpha;
        let sample = self.sample_actor(
            &batch.obs,
            &batch.context,
            batch.history.as_ref(),
            rng,
            true,
        )?;
        let ctx = self.critic_context(&batch.context);
        let (q1, t1) =
            self.critic_net
                .forward(&self.critics[0], &batch.obs, &sample.action, ctx)?;
        let (q2, t2) =
            self.critic_net
                .forward(&self.critics[1], &batch.obs, &sample.action, ctx)?;
        let mean_q =
            |q: &Tensor<F>, r: usize| q.row(r).iter().map(|v| v.as_f64()).sum::<f64>() / n as f64;

        let mut loss = 0.0;
        let mut dq1 = Tensor::zeros(&[b, n]);
        let mut dq2 = Tensor::zeros(&[b, n]);
        let share = F::from_f64(-1.0 / (b * n) as f64);
        for r in 0..b {
            let (m1, m2) = (mean_q(&q1, r), mean_q(&q2, r));
            let target = if m1 <= m2 { &mut dq1 } else { &mut dq2 };
            target.data_mut()[r * n..(r + 1) * n]
                .iter_mut()
                .for_each(|v| *v = share);
            loss += alpha * sample.log_prob[r] - m1.min(m2);
        }
        loss /= b as f64;
        if !loss.is_finite() {
            return Err(Error::Training("non-finite actor loss".into()));
        }
        let da1 = self.critic_net.backward(&self.critics[0], t1, &dq1, None)?;
        let da2 = self.critic_net.backward(&self.critics[1], t2, &dq2, None)?;

        let mut d_mean = Tensor::zeros(&[b, a]);
        let mut d_log_std = Tensor::zeros(&[b, a]);
        let inv_b = 1.0 / b as f64;
        for idx in 0..b * a {
            let act = sample.action.data()[idx].as_f64();
            let e = sample.eps[idx];
            let std = sample.log_std.data()[idx].as_f64().exp();
            let one_m = 1.0 - act * act;
            let d_act = da1.data()[idx].as_f64() + da2.data()[idx].as_f64();
            let dlogp_du = 2.0 * act * one_m / (one_m + TANH_EPS);
            let du = d_act * one_m + alpha * inv_b * dlogp_du;
            d_mean.data_mut()[idx] = F::from_f64(du);
            d_log_std.data_mut()[idx] = F::from_f64(du * std * e - alpha * inv_b);
        }
        let mut grads = Grads::new();
        let tape = sample.tape.expect("recorded");
        self.actor_net
            .backward(&self.actor, tape, &d_mean, &d_log_std, &mut grads)?;
        let entropy = -sample.log_prob.iter().sum::<f64>() * inv_b;
        Ok((loss, entropy, grads))
    }

    /// Adapter loss and its `φ` gradients on `batch` without applying them.
    pub fn adapter_loss_and_grads(&self, batch: &Batch<F>) -> Result<(f64, Grads<F>)> {
        let (net, params) = match (&self.adapter_net, &self.adapter) {
            (Some(n), Some(p)) => (n, p),
            _ => return Err(config_err!("{} has no adapter", self.method.name())),
        };
        let history = batch
            .history
            .as_ref()
            .ok_or_else(|| config_err!("adapter regression needs stored histories"))?;
        let z = self
            .actor_net
            .encode(
                &self.actor,
                &PolicyInputs {
                    obs: &batch.obs,
                    context: Some(&batch.context),
                    history: None,
                },
            )?
            .expect("expert has a context encoder")
            .0;
        let (z_hat, tape) = net
            .encode(
                params,
                &PolicyInputs {
                    obs: &batch.obs,
                    context: None,
                    history: Some(history),
                },
            )?
            .expect("adapter has a history encoder");
        let (loss, d_zhat) = adapter_loss(&z, &z_hat)?;
        let mut grads = Grads::new();
        net.backward_encode(params, tape, &d_zhat, &mut grads)?;
        Ok((loss.as_f64(), grads))
    }

    /// One regression step of `φ` toward the current `ψ(c)`.
    pub fn adapter_regression(&mut self, batch: &Batch<F>) -> Result<f64> {
        let (loss, grads) = self.adapter_loss_and_grads(batch)?;
        if !loss.is_finite() {
            return Err(Error::Training("non-finite adapter loss".into()));
        }
        let cfg = AdamConfig::with_lr(self.hyper.lr_adapter);
        self.adapter
            .as_mut()
            .expect("checked by adapter_loss_and_grads")
            .adam_step(&grads, &cfg)?;
        Ok(loss)
    }
}

struct ActorSample<F> {
    log_std: Tensor<F>,
    tape: Option<crate::policy::PolicyTape<F>>,
    eps: Vec<f64>,
    action: Tensor<F>,
    log_prob: Vec<f64>,
}
