use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use crate::error::{config_err, Error, Result};
use crate::nn::tensor::Tensor;
use crate::real::Real;

static GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    GENERATION.fetch_add(1, Ordering::Relaxed)
}

/// Gradients keyed by parameter name.
pub type Grads<F> = BTreeMap<String, Tensor<F>>;

/// Adds `g` into `grads[name]`, creating the entry when missing.
pub fn accumulate<F: Real>(grads: &mut Grads<F>, name: &str, g: Tensor<F>) {
    match grads.get_mut(name) {
        Some(acc) => acc.add_assign(&g),
        None => {
            grads.insert(name.to_string(), g);
        }
    }
}

/// Euclidean norm over every gradient tensor.
pub fn global_norm<F: Real>(grads: &Grads<F>) -> F {
    grads.values().map(|g| g.sum_sq()).sum::<F>().sqrt()
}

/// Rescales `grads` in place so that their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<F: Real>(grads: &mut [&mut Grads<F>], max_norm: F) -> F {
    let norm = grads
        .iter()
        .map(|g| g.values().map(|t| t.sum_sq()).sum::<F>())
        .sum::<F>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for set in grads.iter_mut() {
            for t in set.values_mut() {
                t.scale(s);
            }
        }
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Entry<F> {
    pub(crate) value: Tensor<F>,
    pub(crate) m: Tensor<F>,
    pub(crate) v: Tensor<F>,
}

/// Named network weights plus their Adam state.
#[derive(Debug, Clone)]
pub struct ParameterSet<F> {
    entries: BTreeMap<String, Entry<F>>,
    step: u64,
    generation: u64,
}

impl<F: Real> PartialEq for ParameterSet<F> {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries && self.step == other.step
    }
}

impl<F: Real> Default for ParameterSet<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> ParameterSet<F> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
            step: 0,
            generation: next_generation(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<F>) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(config_err!("duplicate parameter `{name}`"));
        }
        let m = Tensor::zeros(value.shape());
        let v = Tensor::zeros(value.shape());
        self.entries.insert(name.to_string(), Entry { value, m, v });
        self.touch();
        Ok(())
    }

    pub(crate) fn insert_entry(&mut self, name: String, entry: Entry<F>) {
        self.entries.insert(name, entry);
    }

    pub(crate) fn entry(&self, name: &str) -> Option<&Entry<F>> {
        self.entries.get(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<F>> {
        self.entries
            .get(name)
            .map(|e| &e.value)
            .ok_or_else(|| config_err!("missing parameter `{name}`"))
    }

    /// Mutable access to a parameter value. Invalidates outstanding tapes.
    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<F>> {
        self.generation = next_generation();
        self.entries
            .get_mut(name)
            .map(|e| &mut e.value)
            .ok_or_else(|| config_err!("missing parameter `{name}`"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|k| k.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.entries.iter().map(|(k, e)| (k.as_str(), &e.value))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    /// Number of Adam steps applied so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    /// Token that changes on every mutation; tapes record it.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    fn touch(&mut self) {
        self.generation = next_generation();
    }

    /// First and second Adam moments of `name`.
    pub fn moments(&self, name: &str) -> Result<(&Tensor<F>, &Tensor<F>)> {
        self.entries
            .get(name)
            .map(|e| (&e.m, &e.v))
            .ok_or_else(|| config_err!("missing parameter `{name}`"))
    }

    /// One Adam update with bias correction.
    ///
    /// Entries absent from `grads` are left untouched. The whole step is
    /// rejected if any gradient is non-finite.
    pub fn adam_step(&mut self, grads: &Grads<F>, cfg: &AdamConfig) -> Result<()> {
        for (name, g) in grads {
            let e = self
                .entries
                .get(name)
                .ok_or_else(|| config_err!("gradient for unknown parameter `{name}`"))?;
            if e.value.shape() != g.shape() {
                return Err(config_err!(
                    "gradient for `{name}` has shape {:?}, parameter has {:?}",
                    g.shape(),
                    e.value.shape()
                ));
            }
            if !g.is_finite() {
                return Err(Error::Training(alloc::format!(
                    "non-finite gradient for `{name}`"
                )));
            }
        }
        self.step += 1;
        self.touch();
        let t = self.step as i32;
        let b1 = F::from_f64(cfg.beta1);
        let b2 = F::from_f64(cfg.beta2);
        let one = F::one();
        let bc1 = one - b1.powi(t);
        let bc2 = one - b2.powi(t);
        let lr = F::from_f64(cfg.lr);
        let eps = F::from_f64(cfg.eps);
        for (name, g) in grads {
            let e = self.entries.get_mut(name).expect("checked above");
            let Entry { value, m, v } = e;
            for (((p, mi), vi), &gi) in value
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    fn check_layout(&self, other: &Self) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(config_err!(
                "parameter layouts differ: {} vs {} entries",
                self.entries.len(),
                other.entries.len()
            ));
        }
        for ((na, ea), (nb, eb)) in self.entries.iter().zip(&other.entries) {
            if na != nb || ea.value.shape() != eb.value.shape() {
                return Err(config_err!(
                    "parameter layouts differ at `{na}` {:?} vs `{nb}` {:?}",
                    ea.value.shape(),
                    eb.value.shape()
                ));
            }
        }
        Ok(())
    }

    /// `self <- (1 - tau) * self + tau * online`, elementwise.
    pub fn polyak_blend(&mut self, online: &Self, tau: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(config_err!("polyak rate {tau} outside [0, 1]"));
        }
        self.check_layout(online)?;
        if tau == 0.0 {
            return Ok(());
        }
        self.touch();
        let tau = F::from_f64(tau);
        let keep = F::one() - tau;
        for (dst, src) in self.entries.values_mut().zip(online.entries.values()) {
            for (t, &o) in dst.value.data_mut().iter_mut().zip(src.value.data()) {
                *t = keep * *t + tau * o;
            }
        }
        Ok(())
    }

    /// Copies every entry of `src` selected by `filter` into `self` and resets
    /// the Adam moments of the copied entries.
    pub fn copy_entries(&mut self, src: &Self, filter: &NameFilter) -> Result<usize> {
        let mut selected = Vec::new();
        for (name, e) in &src.entries {
            if !filter.matches(name) {
                continue;
            }
            let dst = self
                .entries
                .get(name)
                .ok_or_else(|| config_err!("copy target lacks parameter `{name}`"))?;
            if dst.value.shape() != e.value.shape() {
                return Err(config_err!(
                    "copy of `{name}`: shape {:?} vs {:?}",
                    e.value.shape(),
                    dst.value.shape()
                ));
            }
            selected.push(name);
        }
        if let Some(name) = self
            .entries
            .keys()
            .find(|n| filter.matches(n) && !src.entries.contains_key(*n))
        {
            return Err(config_err!("copy source lacks parameter `{name}`"));
        }
        if selected.is_empty() {
            return Ok(0);
        }
        self.touch();
        for name in &selected {
            let s = &src.entries[*name].value;
            let d = self.entries.get_mut(*name).expect("checked above");
            d.value.data_mut().copy_from_slice(s.data());
            d.m.data_mut().iter_mut().for_each(|x| *x = F::zero());
            d.v.data_mut().iter_mut().for_each(|x| *x = F::zero());
        }
        Ok(selected.len())
    }

    /// Sub-set containing the entries selected by `filter`.
    pub fn subset(&self, filter: &NameFilter) -> Self {
        let mut out = Self::new();
        for (name, e) in &self.entries {
            if filter.matches(name) {
                out.entries.insert(name.clone(), e.clone());
            }
        }
        out.step = self.step;
        out
    }

    pub fn cast<G: Real>(&self) -> ParameterSet<G> {
        let mut out = ParameterSet::new();
        for (name, e) in &self.entries {
            out.entries.insert(
                name.clone(),
                Entry {
                    value: e.value.cast(),
                    m: e.m.cast(),
                    v: e.v.cast(),
                },
            );
        }
        out.step = self.step;
        out
    }
}

/// Selects parameter names by prefix, e.g. `obs_encoder.` or `decision.*`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NameFilter {
    prefixes: Vec<String>,
}

impl NameFilter {
    /// Patterns may end in `*`; a bare name matches itself and its children.
    pub fn new<S: AsRef<str>>(patterns: &[S]) -> Self {
        let prefixes = patterns
            .iter()
            .map(|p| p.as_ref().trim_end_matches('*').to_string())
            .collect();
        Self { prefixes }
    }

    pub fn none() -> Self {
        Self::default()
    }

    pub fn matches(&self, name: &str) -> bool {
        self.prefixes.iter().any(|p| name.starts_with(p.as_str()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn scalar_set(name: &str, v: f64) -> ParameterSet<f64> {
        let mut p = ParameterSet::new();
        p.insert(name, Tensor::from_f64(&[1], &[v]).unwrap())
            .unwrap();
        p
    }

    fn grads(name: &str, g: f64) -> Grads<f64> {
        let mut out = Grads::new();
        out.insert(name.into(), Tensor::from_f64(&[1], &[g]).unwrap());
        out
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = scalar_set("w", 0.5);
        p.adam_step(&grads("w", 1.0), &AdamConfig::with_lr(3e-4))
            .unwrap();
        let delta = p.get("w").unwrap().data()[0] - 0.5;
        assert!((delta + 3e-4).abs() < 1e-7, "delta {delta}");
        assert_eq!(p.step(), 1);
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut p = scalar_set("w", 0.5);
        p.adam_step(&grads("w", 0.0), &AdamConfig::with_lr(3e-4))
            .unwrap();
        assert_eq!(p.get("w").unwrap().data()[0], 0.5);
    }

    #[test]
    fn adam_repeated_gradient_keeps_step_size() {
        let cfg = AdamConfig::with_lr(3e-4);
        let mut p = scalar_set("w", 0.0);
        p.adam_step(&grads("w", 0.7), &cfg).unwrap();
        let d1 = p.get("w").unwrap().data()[0];
        p.adam_step(&grads("w", 0.7), &cfg).unwrap();
        let d2 = p.get("w").unwrap().data()[0] - d1;
        assert!((d2.abs() - d1.abs()).abs() < 1e-6);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut p = scalar_set("w", 0.5);
        let err = p
            .adam_step(&grads("w", f64::NAN), &AdamConfig::with_lr(1e-3))
            .unwrap_err();
        assert!(matches!(err, Error::Training(_)));
        assert_eq!(p.get("w").unwrap().data()[0], 0.5);
        assert_eq!(p.step(), 0);
    }

    #[test]
    fn polyak_cases() {
        let mut t = scalar_set("w", 1.0);
        t.polyak_blend(&scalar_set("w", 0.0), 0.005).unwrap();
        assert!((t.get("w").unwrap().data()[0] - 0.995).abs() < 1e-15);

        let mut t = scalar_set("w", 1.7);
        t.polyak_blend(&scalar_set("w", -0.3), 1.0).unwrap();
        assert_eq!(t.get("w").unwrap().data()[0], -0.3);

        let mut t = scalar_set("w", 2.0);
        t.polyak_blend(&scalar_set("w", 4.0), 0.5).unwrap();
        assert_eq!(t.get("w").unwrap().data()[0], 3.0);
    }

    #[test]
    fn polyak_halves_gap_after_ln2_over_tau_steps() {
        let tau = 0.005;
        let n = (core::f64::consts::LN_2 / tau).round() as usize;
        assert_eq!(n, 139);
        let mut t = scalar_set("w", 1.0);
        let online = scalar_set("w", 0.0);
        for _ in 0..n {
            t.polyak_blend(&online, tau).unwrap();
        }
        let gap = t.get("w").unwrap().data()[0];
        assert!((gap - 0.5).abs() < 0.01 * 0.5, "gap {gap}");
    }

    #[test]
    fn polyak_layout_mismatch() {
        let mut t = scalar_set("w", 1.0);
        assert!(matches!(
            t.polyak_blend(&scalar_set("v", 0.0), 0.1),
            Err(Error::Config(_))
        ));
    }

    fn policy_like(seed: f64) -> ParameterSet<f64> {
        let mut p = ParameterSet::new();
        for (i, name) in ["obs_encoder.0.w", "decision.0.w", "history_adapter.0.w"]
            .iter()
            .enumerate()
        {
            let vals = vec![seed + i as f64, seed - i as f64];
            p.insert(name, Tensor::from_f64(&[2], &vals).unwrap())
                .unwrap();
        }
        p
    }

    #[test]
    fn copy_entries_respects_filter() {
        let src = policy_like(10.0);
        let mut dst = policy_like(-5.0);
        let phi_before = dst.get("history_adapter.0.w").unwrap().clone();
        let filter = NameFilter::new(&["obs_encoder.*", "decision.*"]);
        assert_eq!(dst.copy_entries(&src, &filter).unwrap(), 2);
        assert_eq!(dst.get("obs_encoder.0.w"), src.get("obs_encoder.0.w"));
        assert_eq!(dst.get("decision.0.w"), src.get("decision.0.w"));
        assert_eq!(dst.get("history_adapter.0.w").unwrap(), &phi_before);

        let once = dst.clone();
        dst.copy_entries(&src, &filter).unwrap();
        assert_eq!(dst, once);
    }

    #[test]
    fn copy_entries_empty_filter_is_noop() {
        let src = policy_like(10.0);
        let mut dst = policy_like(-5.0);
        let before = dst.clone();
        assert_eq!(dst.copy_entries(&src, &NameFilter::none()).unwrap(), 0);
        assert_eq!(dst, before);
    }

    #[test]
    fn copy_entries_resets_moments_and_reports_missing() {
        let src = policy_like(1.0);
        let mut dst = policy_like(2.0);
        let mut g = Grads::new();
        g.insert(
            "decision.0.w".into(),
            Tensor::from_f64(&[2], &[1.0, 1.0]).unwrap(),
        );
        dst.adam_step(&g, &AdamConfig::with_lr(1e-3)).unwrap();
        assert!(dst.moments("decision.0.w").unwrap().0.data()[0] != 0.0);
        dst.copy_entries(&src, &NameFilter::new(&["decision.*"]))
            .unwrap();
        assert_eq!(dst.moments("decision.0.w").unwrap().0.data(), &[0.0, 0.0]);

        let mut small = ParameterSet::new();
        small
            .insert("decision.0.w", Tensor::from_f64(&[2], &[0.0, 0.0]).unwrap())
            .unwrap();
        let err = small.copy_entries(&src, &NameFilter::new(&["obs_encoder.*"]));
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn clip_scales_to_max_norm() {
        let mut g = grads("w", 30.0);
        let mut h = grads("v", 40.0);
        let norm = clip_global_norm(&mut [&mut g, &mut h], 10.0);
        assert_eq!(norm, 50.0);
        assert!((g["w"].data()[0] - 6.0).abs() < 1e-12);
        assert!((h["v"].data()[0] - 8.0).abs() < 1e-12);
    }
}
