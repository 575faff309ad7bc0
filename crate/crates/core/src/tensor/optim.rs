use std::collections::BTreeMap;

use super::{Gradients, Group, ParamStore, Real};
use crate::error::{DamsError, Result};

/// Base learning rate and warmup length of one parameter group.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupSchedule {
    pub base_lr: Real,
    pub warmup: u64,
}

/// Linear warmup to the base rate, then inverse square-root decay.
#[derive(Clone, Debug, PartialEq)]
pub struct LrSchedule {
    groups: BTreeMap<Group, GroupSchedule>,
}

impl LrSchedule {
    pub fn new() -> Self {
        LrSchedule { groups: BTreeMap::new() }
    }

    /// Every listed group shares one base rate and warmup.
    pub fn uniform(groups: &[Group], base_lr: Real, warmup: u64) -> Self {
        let mut s = LrSchedule::new();
        for &g in groups {
            s.set(g, base_lr, warmup);
        }
        s
    }

    pub fn set(&mut self, group: Group, base_lr: Real, warmup: u64) -> &mut Self {
        assert!(warmup > 0, "warmup must be positive");
        self.groups.insert(group, GroupSchedule { base_lr, warmup });
        self
    }

    pub fn get(&self, group: Group) -> Option<GroupSchedule> {
        self.groups.get(&group).copied()
    }

    pub fn groups(&self) -> impl Iterator<Item = Group> + '_ {
        self.groups.keys().copied()
    }

    /// Learning rate of `group` at 1-based `step`; zero for groups not scheduled.
    pub fn lr_at(&self, step: u64, group: Group) -> Real {
        match self.groups.get(&group) {
            Some(g) => Self::shape(step, g.warmup) * g.base_lr,
            None => 0.0,
        }
    }

    fn shape(step: u64, warmup: u64) -> Real {
        let step = step.max(1);
        if step <= warmup {
            step as Real / warmup as Real
        } else {
            (warmup as Real / step as Real).sqrt()
        }
    }
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: Real,
    pub beta2: Real,
    pub eps: Real,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam moments for every parameter of a store plus the shared step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<Real>>,
    pub v: Vec<Vec<Real>>,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let m: Vec<Vec<Real>> = store.ids().map(|id| vec![0.0; store.get(id).len()]).collect();
        AdamState { config, step: 0, v: m.clone(), m }
    }

    /// One bias-corrected Adam update of every parameter whose group the
    /// schedule lists. Gradients are read, never modified.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, schedule: &LrSchedule) -> Result<()> {
        if grads.num_params() != store.len() || self.m.len() != store.len() {
            return Err(DamsError::Usage(format!(
                "optimizer/gradient sets do not match the model: {} params, {} grads, {} moments",
                store.len(),
                grads.num_params(),
                self.m.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for id in store.ids().collect::<Vec<_>>() {
            let group = store.group(id);
            let Some(_) = schedule.get(group) else { continue };
            let lr = schedule.lr_at(self.step, group);
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            let g = grads.raw(id);
            if g.is_none() && m.iter().all(|x| *x == 0.0) && v.iter().all(|x| *x == 0.0) {
                // zero gradient on zero moments: the update is exactly zero
                continue;
            }
            let p = store.get_mut(id).data_mut();
            for i in 0..p.len() {
                let gi = g.map_or(0.0, |g| g[i]);
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut Gradients, max_norm: Real) -> Real {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.slots_mut() {
            for v in g.iter_mut() {
                *v *= s;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Tape, Tensor};

    #[test]
    fn schedule_shape() {
        let s = LrSchedule::uniform(&[Group::Embedding], 0.02, 100);
        assert!((s.lr_at(100, Group::Embedding) - 0.02).abs() < 1e-15);
        assert!((s.lr_at(50, Group::Embedding) - 0.01).abs() < 1e-15);
        assert!((s.lr_at(400, Group::Embedding) - 0.01).abs() < 1e-15);
        assert_eq!(s.lr_at(10, Group::BridgeHier), 0.0);
        for step in 1..1000 {
            assert!(s.lr_at(step, Group::Embedding) <= s.lr_at(100, Group::Embedding));
            assert!(s.lr_at(step, Group::Embedding) >= 0.0);
        }
    }

    fn one_param(value: Vec<Real>, group: Group) -> (ParamStore, crate::tensor::ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("p", group, Tensor::vector(value));
        (store, id)
    }

    fn grads_for(store: &ParamStore, id: crate::tensor::ParamId, scale: Real) -> Gradients {
        let mut tape = Tape::new(store);
        let p = tape.param(id);
        let s = tape.scale(p, scale);
        let loss = tape.sum(s);
        tape.backward(loss).unwrap()
    }

    #[test]
    fn first_step_by_hand() {
        let (mut store, id) = one_param(vec![0.0], Group::Embedding);
        let grads = grads_for(&store, id, 1.0);
        let schedule = LrSchedule::uniform(&[Group::Embedding], 0.1, 1);
        let mut adam = AdamState::new(&store, AdamConfig::default());
        adam.step(&mut store, &grads, &schedule).unwrap();
        let expected = -0.1 * (1.0 / (1.0 + 1e-8));
        assert!((store.get(id).data()[0] - expected).abs() < 1e-15);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let (mut store, id) = one_param(vec![0.3, -0.7], Group::Embedding);
        let schedule = LrSchedule::uniform(&[Group::Embedding], 0.1, 3);
        let mut adam = AdamState::new(&store, AdamConfig::default());
        for _ in 0..25 {
            let grads = grads_for(&store, id, 0.0);
            adam.step(&mut store, &grads, &schedule).unwrap();
        }
        assert_eq!(store.get(id).data(), &[0.3, -0.7]);
    }

    #[test]
    fn group_rates_scale_updates() {
        let mut store = ParamStore::new();
        let a = store.add("a", Group::DialogueEncoder, Tensor::vector(vec![0.0]));
        let b = store.add("b", Group::SummaryDecoder, Tensor::vector(vec![0.0]));
        let mut tape = Tape::new(&store);
        let (pa, pb) = (tape.param(a), tape.param(b));
        let s = tape.add(pa, pb);
        let loss = tape.sum(s);
        let grads = tape.backward(loss).unwrap();
        drop(tape);
        let mut schedule = LrSchedule::new();
        schedule.set(Group::DialogueEncoder, 1e-3, 1).set(Group::SummaryDecoder, 1e-2, 1);
        let mut adam = AdamState::new(&store, AdamConfig::default());
        adam.step(&mut store, &grads, &schedule).unwrap();
        let (da, db) = (store.get(a).data()[0].abs(), store.get(b).data()[0].abs());
        assert!((db / da - 10.0).abs() < 1e-9);
    }

    #[test]
    fn mismatched_gradients_are_rejected() {
        let (mut store, _) = one_param(vec![1.0], Group::Embedding);
        let grads = Gradients::empty(3);
        let mut adam = AdamState::new(&store, AdamConfig::default());
        let schedule = LrSchedule::uniform(&[Group::Embedding], 0.1, 1);
        assert!(matches!(adam.step(&mut store, &grads, &schedule), Err(DamsError::Usage(_))));
    }

    #[test]
    fn clipping_bounds_norm() {
        let (store, id) = one_param(vec![1.0, 1.0, 1.0, 1.0], Group::Embedding);
        let mut grads = grads_for(&store, id, 3.0);
        let before = clip_grad_norm(&mut grads, 1.0);
        assert!((before - 6.0).abs() < 1e-12);
        assert!((grads.global_norm() - 1.0).abs() < 1e-12);
    }
}
