//! Seeded weight initializers.

use crate::tape::Arr;
use ndarray::IxDyn;
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub fn zeros(shape: &[usize]) -> Arr {
    Arr::zeros(IxDyn(shape))
}

pub fn ones(shape: &[usize]) -> Arr {
    Arr::ones(IxDyn(shape))
}

pub fn full(shape: &[usize], v: f64) -> Arr {
    Arr::from_elem(IxDyn(shape), v)
}

/// He-style normal init for ReLU conv/linear weights.
pub fn kaiming_normal<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> Arr {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).unwrap();
    Arr::from_shape_simple_fn(IxDyn(shape), || dist.sample(rng))
}

/// Uniform init in `[-bound, bound]`.
pub fn uniform<R: Rng>(rng: &mut R, shape: &[usize], bound: f64) -> Arr {
    Arr::from_shape_simple_fn(IxDyn(shape), || rng.random_range(-bound..=bound))
}

/// Xavier/Glorot uniform.
pub fn xavier_uniform<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize, fan_out: usize) -> Arr {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, shape, bound)
}
