//! Central finite-difference verification of analytic gradients.

use crate::store::{ParamId, ParamStore};
use rand::seq::index::sample;
use rand::Rng;
use std::rc::Rc;

#[derive(Debug, Clone)]
pub struct GradCheckResult {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

/// Draws `count` (parameter, flat index) pairs uniformly over all trainable
/// scalar parameters.
pub fn sample_param_indices<R: Rng>(store: &ParamStore, rng: &mut R, count: usize) -> Vec<(ParamId, usize)> {
    let mut flat: Vec<(ParamId, usize)> = Vec::new();
    for id in store.ids() {
        let e = &store.entries[id.0];
        if e.buffer || !e.trainable {
            continue;
        }
        for i in 0..e.value.len() {
            flat.push((id, i));
        }
    }
    assert!(!flat.is_empty(), "no trainable parameters to sample");
    let n = count.min(flat.len());
    sample(rng, flat.len(), n).into_iter().map(|i| flat[i]).collect()
}

/// Compares the gradients currently accumulated in `store` against central
/// finite differences of `loss` at the sampled coordinates.
///
/// `loss` must re-run the forward pass from the store's current values;
/// `eps` is scaled by `max(1, |theta|)` per coordinate. Relative error uses
/// `|a - n| / max(|a|, |n|, floor)`.
pub fn finite_difference_check(
    store: &mut ParamStore,
    mut loss: impl FnMut(&mut ParamStore) -> f64,
    samples: &[(ParamId, usize)],
    eps: f64,
    denom_floor: f64,
) -> GradCheckResult {
    let mut result = GradCheckResult {
        checked: 0,
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    for &(id, flat) in samples {
        let analytic = store.grad(id).as_slice().expect("grad contiguous")[flat];
        let theta = store.value(id).as_slice().expect("value contiguous")[flat];
        let h = eps * theta.abs().max(1.0);

        set_flat(store, id, flat, theta + h);
        let up = loss(store);
        set_flat(store, id, flat, theta - h);
        let down = loss(store);
        set_flat(store, id, flat, theta);

        let numeric = (up - down) / (2.0 * h);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(denom_floor);
        result.checked += 1;
        if rel > result.max_rel_err {
            result.max_rel_err = rel;
            result.worst_param = store.name_of(id).to_string();
            result.worst_index = flat;
            result.worst_analytic = analytic;
            result.worst_numeric = numeric;
        }
    }
    result
}

fn set_flat(store: &mut ParamStore, id: ParamId, flat: usize, v: f64) {
    let e = &mut store.entries[id.0];
    let arr = Rc::make_mut(&mut e.value);
    arr.as_slice_mut().expect("value contiguous")[flat] = v;
}
