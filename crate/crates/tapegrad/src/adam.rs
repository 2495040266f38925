//! Adam optimizer with optional global-norm gradient clipping.

use crate::store::ParamStore;
use crate::tape::Arr;
use std::rc::Rc;

pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Arr>,
    v: Vec<Arr>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
    }

    /// Applies one update from the gradients accumulated in `store`, then
    /// zeroes them. Buffers and frozen parameters are left untouched.
    pub fn step(&mut self, store: &mut ParamStore) {
        if self.m.is_empty() {
            self.m = store.entries.iter().map(|e| Arr::zeros(e.value.raw_dim())).collect();
            self.v = store.entries.iter().map(|e| Arr::zeros(e.value.raw_dim())).collect();
        }
        assert_eq!(self.m.len(), store.entries.len(), "optimizer bound to a different store");
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for (i, e) in store.entries.iter_mut().enumerate() {
            if e.buffer || !e.trainable {
                continue;
            }
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            m.zip_mut_with(&e.grad, |mi, &gi| *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi);
            v.zip_mut_with(&e.grad, |vi, &gi| *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi);
            let value = Rc::make_mut(&mut e.value);
            let lr = self.lr;
            let eps = self.eps;
            ndarray::Zip::from(value).and(&*m).and(&*v).for_each(|p, &mi, &vi| {
                let mhat = mi / b1t;
                let vhat = vi / b2t;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            });
        }
        store.zero_grads();
    }
}

/// Scales accumulated gradients so their global L2 norm is at most
/// `max_norm`. Returns the pre-clip norm.
pub fn clip_global_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for e in &store.entries {
        if e.buffer || !e.trainable {
            continue;
        }
        sq += e.grad.iter().map(|g| g * g).sum::<f64>();
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        for e in &mut store.entries {
            if e.buffer || !e.trainable {
                continue;
            }
            e.grad.mapv_inplace(|g| g * k);
        }
    }
    norm
}
