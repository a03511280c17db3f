use alloc::vec;
use alloc::vec::Vec;

/// Sliding window over the last `capacity` observation-action pairs.
///
/// Slots that precede the episode start read as zeros. The flattened window
/// is ordered oldest to newest.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryBuffer {
    capacity: usize,
    pair_dim: usize,
    slots: Vec<f32>,
    cursor: usize,
}

impl HistoryBuffer {
    pub fn new(capacity: usize, obs_dim: usize, action_dim: usize) -> Self {
        assert!(capacity >= 1, "history length must be at least 1");
        let pair_dim = obs_dim + action_dim;
        Self {
            capacity,
            pair_dim,
            slots: vec![0.0; capacity * pair_dim],
            cursor: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn pair_dim(&self) -> usize {
        self.pair_dim
    }

    pub fn reset(&mut self) {
        self.slots.iter_mut().for_each(|v| *v = 0.0);
        self.cursor = 0;
    }

    /// Appends `(obs, action)`, evicting the oldest pair.
    pub fn push(&mut self, obs: &[f64], action: &[f64]) {
        assert_eq!(obs.len() + action.len(), self.pair_dim);
        let slot = &mut self.slots[self.cursor * self.pair_dim..(self.cursor + 1) * self.pair_dim];
        for (d, &s) in slot.iter_mut().zip(obs.iter().chain(action)) {
            *d = s as f32;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// Flattened `[capacity, pair_dim]` window, oldest first.
    pub fn window(&self) -> Vec<f32> {
        let split = self.cursor * self.pair_dim;
        let mut out = Vec::with_capacity(self.slots.len());
        out.extend_from_slice(&self.slots[split..]);
        out.extend_from_slice(&self.slots[..split]);
        out
    }
}

/// The window that follows `window` once `(obs, action)` is appended.
pub fn shifted_window(window: &[f32], pair_dim: usize, obs: &[f32], action: &[f32]) -> Vec<f32> {
    let mut out = Vec::with_capacity(window.len());
    out.extend_from_slice(&window[pair_dim..]);
    out.extend_from_slice(obs);
    out.extend_from_slice(action);
    out
}
