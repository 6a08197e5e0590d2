use serde::{Deserialize, Serialize};

use super::param::ParamStore;
use super::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive-moment gradient descent over the trainable records of a store.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    cfg: AdamConfig,
    step: u64,
    moments: Vec<Option<(Tensor<T>, Tensor<T>)>>,
}

impl<T: Element> Adam<T> {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated gradients. Frozen records are skipped.
    pub fn step(&mut self, store: &mut ParamStore<T>) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.cfg.beta1.powi(t);
        let c2 = 1.0 - self.cfg.beta2.powi(t);
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        if self.moments.len() < store.len() {
            self.moments.resize_with(store.len(), || None);
        }
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let p = store.get_mut(id);
            if !p.trainable {
                continue;
            }
            let (m, v) = self.moments[id.index()]
                .get_or_insert_with(|| (Tensor::zeros(p.value.shape()), Tensor::zeros(p.value.shape())));
            let grads = p.grad.data();
            let md = m.data_mut();
            let vd = v.data_mut();
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                let g = grads[i].to_f64();
                let mi = b1 * md[i].to_f64() + (1.0 - b1) * g;
                let vi = b2 * vd[i].to_f64() + (1.0 - b2) * g * g;
                md[i] = T::from_f64(mi);
                vd[i] = T::from_f64(vi);
                let update = self.cfg.lr * (mi / c1) / ((vi / c2).sqrt() + self.cfg.eps);
                *w = T::from_f64(w.to_f64() - update);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimises_a_quadratic() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::full(&[1], 5.0));
        let mut opt = Adam::new(AdamConfig {
            lr: 0.1,
            ..Default::default()
        });
        for _ in 0..500 {
            store.zero_grad();
            let w = store.value(id).data()[0];
            store.accumulate(id, &Tensor::full(&[1], 2.0 * (w - 1.0)), 1.0).unwrap();
            opt.step(&mut store);
        }
        assert!((store.value(id).data()[0] - 1.0).abs() < 1e-2);
    }

    #[test]
    fn frozen_records_are_bitwise_unchanged() {
        let mut store = ParamStore::<f32>::new();
        let id = store.add("w", Tensor::full(&[3], 0.25));
        store.set_trainable(id, false);
        let before = store.value(id).clone();
        let mut opt = Adam::new(AdamConfig::default());
        store.get_mut(id).grad.fill(1.0);
        opt.step(&mut store);
        assert_eq!(store.value(id), &before);
    }
}
