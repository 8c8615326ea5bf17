//! Adam with bias correction. State (and the step count used for bias
//! correction) is tracked per parameter name, so freezing a subset of
//! parameters for a few epochs never perturbs the update schedule of the
//! rest.

use std::collections::BTreeMap;

use super::store::ParamStore;
use super::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
struct Slot {
    m: Vec<f32>,
    v: Vec<f32>,
    t: u32,
}

#[derive(Debug, Default)]
pub struct Adam {
    slots: BTreeMap<String, Slot>,
}

impl Adam {
    pub fn new() -> Self {
        Adam::default()
    }

    /// One update of `param` in place from `grad`.
    pub fn step(&mut self, name: &str, param: &mut Tensor, grad: &Tensor, cfg: &AdamConfig) {
        assert_eq!(param.shape(), grad.shape(), "adam step on {name}: shape mismatch");
        let slot = self.slots.entry(name.to_string()).or_insert_with(|| Slot {
            m: vec![0.0; param.len()],
            v: vec![0.0; param.len()],
            t: 0,
        });
        slot.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(slot.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(slot.t as i32);
        for ((p, g), (m, v)) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(slot.m.iter_mut().zip(slot.v.iter_mut()))
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *p -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }

    /// Applies one update per named gradient to the matching store entries.
    /// Parameters without a gradient are untouched, slots included.
    pub fn apply(
        &mut self,
        store: &mut ParamStore,
        grads: &BTreeMap<String, Tensor>,
        cfg: &AdamConfig,
    ) {
        for (name, grad) in grads {
            self.step(name, store.get_mut(name), grad, cfg);
        }
    }
}
