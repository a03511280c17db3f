//! Experience storage: transitions, the FIFO replay ring and minibatches.

use alloc::vec::Vec;

use rand::Rng;

use crate::envs::history::shifted_window;
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::real::Real;

/// One stored step `(o, a, r, o', done, h, c)`.
///
/// `history` is the window *before* `(obs, action)` was appended.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f32>,
    pub action: Vec<f32>,
    pub reward: f32,
    pub next_obs: Vec<f32>,
    /// Episode ended after this step.
    pub done: bool,
    /// No bootstrapping beyond this step.
    pub terminal: bool,
    pub history: Vec<f32>,
    pub context: Vec<f32>,
    pub worker: u32,
    pub episode: u64,
    pub episode_step: u32,
    pub snapshot_version: u64,
}

/// Fixed-capacity FIFO ring with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
    pushed: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
            pushed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total number of pushes since creation.
    pub fn pushed(&self) -> u64 {
        self.pushed
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
        self.pushed += 1;
    }

    /// Oldest-to-newest view of the contents.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity {
            0
        } else {
            self.next
        };
        self.items[split..].iter().chain(self.items[..split].iter())
    }

    /// `batch` indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.items.len() < batch || batch == 0 {
            return Err(Error::Usage(alloc::format!(
                "cannot sample {batch} transitions from a buffer holding {}",
                self.items.len()
            )));
        }
        Ok((0..batch)
            .map(|_| rng.random_range(0..self.items.len()))
            .collect())
    }

    pub fn get(&self, idx: usize) -> &Transition {
        &self.items[idx]
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        Ok(self
            .sample_indices(batch, rng)?
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }
}

/// Minibatch laid out as network inputs.
#[derive(Debug, Clone)]
pub struct Batch<F> {
    pub obs: Tensor<F>,
    pub action: Tensor<F>,
    pub reward: Vec<f64>,
    pub next_obs: Tensor<F>,
    pub terminal: Vec<bool>,
    /// `[batch, H, obs + action]`, absent when `H == 0` was requested.
    pub history: Option<Tensor<F>>,
    /// Window seen at the next step.
    pub next_history: Option<Tensor<F>>,
    pub context: Tensor<F>,
}

impl<F: Real> Batch<F> {
    /// Stacks transitions. `history_len` of zero skips the history tensors.
    pub fn from_transitions(items: &[&Transition], history_len: usize) -> Result<Self> {
        let b = items.len();
        let first = items
            .first()
            .ok_or_else(|| Error::Usage("empty minibatch".into()))?;
        let (od, ad, cd) = (
            first.obs.len(),
            first.action.len(),
            first.context.len().max(1),
        );
        let cast =
            |v: &[f32], out: &mut Vec<F>| out.extend(v.iter().map(|&x| F::from_f64(x as f64)));
        let mut obs = Vec::with_capacity(b * od);
        let mut act = Vec::with_capacity(b * ad);
        let mut next = Vec::with_capacity(b * od);
        let mut ctx = Vec::with_capacity(b * cd);
        let pair = od + ad;
        let mut hist = Vec::new();
        let mut next_hist = Vec::new();
        for t in items {
            cast(&t.obs, &mut obs);
            cast(&t.action, &mut act);
            cast(&t.next_obs, &mut next);
            if t.context.is_empty() {
                ctx.push(F::zero());
            } else {
                cast(&t.context, &mut ctx);
            }
            if history_len > 0 {
                if t.history.len() != history_len * pair {
                    return Err(Error::Config(alloc::format!(
                        "stored window has {} values, expected {}",
                        t.history.len(),
                        history_len * pair
                    )));
                }
                cast(&t.history, &mut hist);
                cast(
                    &shifted_window(&t.history, pair, &t.obs, &t.action),
                    &mut next_hist,
                );
            }
        }
        let (history, next_history) = if history_len > 0 {
            (
                Some(Tensor::new(alloc::vec![b, history_len, pair], hist)?),
                Some(Tensor::new(alloc::vec![b, history_len, pair], next_hist)?),
            )
        } else {
            (None, None)
        };
        Ok(Self {
            obs: Tensor::new(alloc::vec![b, od], obs)?,
            action: Tensor::new(alloc::vec![b, ad], act)?,
            reward: items.iter().map(|t| t.reward as f64).collect(),
            next_obs: Tensor::new(alloc::vec![b, od], next)?,
            terminal: items.iter().map(|t| t.terminal).collect(),
            history,
            next_history,
            context: Tensor::new(alloc::vec![b, cd], ctx)?,
        })
    }

    pub fn len(&self) -> usize {
        self.reward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reward.is_empty()
    }
}
