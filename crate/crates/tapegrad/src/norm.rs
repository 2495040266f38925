//! Batch normalization as fused tape ops (channel axis 1).
//!
//! All passes run over contiguous per-(sample, channel) blocks, which for
//! the `(N, C, ...)` layouts used here is a straight slice walk.

use crate::tape::{Arr, Tape, Var};
use ndarray::Array1;
use std::rc::Rc;

pub(crate) const BN_EPS: f64 = 1e-5;

/// Iterates contiguous `(sample, channel)` blocks of a standard-layout
/// `(N, C, ...)` array.
#[inline]
fn block_len(x: &Arr) -> (usize, usize, usize) {
    let n = x.shape()[0];
    let c = x.shape()[1];
    let block = x.len() / (n * c);
    (n, c, block)
}

fn channel_stats(x: &Arr) -> (Array1<f64>, Array1<f64>, f64) {
    let xs = x.as_slice().expect("batch norm input must be standard layout");
    let (n, c, block) = block_len(x);
    let count = (n * block) as f64;
    let mut sum = vec![0.0f64; c];
    let mut sumsq = vec![0.0f64; c];
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * block;
            let mut s = 0.0;
            let mut s2 = 0.0;
            for &v in &xs[base..base + block] {
                s += v;
                s2 += v * v;
            }
            sum[ci] += s;
            sumsq[ci] += s2;
        }
    }
    let mean: Array1<f64> = sum.iter().map(|s| s / count).collect();
    let var: Array1<f64> = sumsq
        .iter()
        .zip(&mean)
        .map(|(s2, m)| (s2 / count - m * m).max(0.0))
        .collect();
    (mean, var, count)
}

impl Tape {
    /// Training-mode batch norm over axis 1, normalizing with batch
    /// statistics (biased variance). Returns the output node plus the batch
    /// mean/var so the caller can maintain running estimates.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var) -> (Var, Array1<f64>, Array1<f64>) {
        let xv = self.value_rc(x);
        let gv = self.value_rc(gamma);
        let bv = self.value(beta).clone();
        let c = xv.shape()[1];
        assert_eq!(gv.len(), c);
        assert_eq!(bv.len(), c);
        let gs: Vec<f64> = gv.iter().cloned().collect();
        let bs: Vec<f64> = bv.iter().cloned().collect();

        let (mean, var, count) = channel_stats(&xv);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();

        let (n, _, block) = block_len(&xv);
        let xs = xv.as_slice().expect("standard layout");
        let mut xhat = vec![0.0f64; xs.len()];
        let mut out = vec![0.0f64; xs.len()];
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * block;
                let m = mean[ci];
                let is = inv_std[ci];
                let g = gs[ci];
                let b = bs[ci];
                for i in base..base + block {
                    let xh = (xs[i] - m) * is;
                    xhat[i] = xh;
                    out[i] = xh * g + b;
                }
            }
        }
        let out = Arr::from_shape_vec(xv.raw_dim(), out).unwrap();
        let xhat = Rc::new(xhat);
        let inv_std_b = inv_std;
        let mean_out = mean;
        let var_out = var;
        let dims = (n, c, block);
        let node = self.push(
            out,
            vec![x, gamma, beta],
            Box::new(move |g, _| {
                let (n, c, block) = dims;
                let gsl = g.as_slice().expect("standard layout");
                let mut dgamma = vec![0.0f64; c];
                let mut dbeta = vec![0.0f64; c];
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * block;
                        let mut sg = 0.0;
                        let mut sgx = 0.0;
                        for i in base..base + block {
                            sg += gsl[i];
                            sgx += gsl[i] * xhat[i];
                        }
                        dbeta[ci] += sg;
                        dgamma[ci] += sgx;
                    }
                }
                let mut dx = vec![0.0f64; gsl.len()];
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * block;
                        let k = gs[ci] * inv_std_b[ci];
                        let mg = dbeta[ci] / count;
                        let mgx = dgamma[ci] / count;
                        for i in base..base + block {
                            dx[i] = k * (gsl[i] - mg - xhat[i] * mgx);
                        }
                    }
                }
                vec![
                    Some(Arr::from_shape_vec(g.raw_dim(), dx).unwrap()),
                    Some(Array1::from_vec(dgamma).into_dyn()),
                    Some(Array1::from_vec(dbeta).into_dyn()),
                ]
            }),
        );
        (node, mean_out, var_out)
    }

    /// Evaluation-mode batch norm using fixed running statistics.
    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &Array1<f64>, var: &Array1<f64>) -> Var {
        let xv = self.value_rc(x);
        let gv = self.value_rc(gamma);
        let bv = self.value(beta).clone();
        let c = xv.shape()[1];
        assert_eq!(mean.len(), c);
        assert_eq!(var.len(), c);
        let gs: Vec<f64> = gv.iter().cloned().collect();
        let bs: Vec<f64> = bv.iter().cloned().collect();
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let means: Vec<f64> = mean.to_vec();

        let (n, _, block) = block_len(&xv);
        let xs = xv.as_slice().expect("standard layout");
        let mut out = vec![0.0f64; xs.len()];
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * block;
                let m = means[ci];
                let is = inv_std[ci];
                let g = gs[ci];
                let b = bs[ci];
                for i in base..base + block {
                    out[i] = (xs[i] - m) * is * g + b;
                }
            }
        }
        let out = Arr::from_shape_vec(xv.raw_dim(), out).unwrap();
        let xb = Rc::clone(&xv);
        let dims = (n, c, block);
        self.push(
            out,
            vec![x, gamma, beta],
            Box::new(move |g, _| {
                let (n, c, block) = dims;
                let gsl = g.as_slice().expect("standard layout");
                let xsl = xb.as_slice().expect("standard layout");
                let mut dgamma = vec![0.0f64; c];
                let mut dbeta = vec![0.0f64; c];
                let mut dx = vec![0.0f64; gsl.len()];
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * block;
                        let m = means[ci];
                        let is = inv_std[ci];
                        let k = gs[ci] * is;
                        for i in base..base + block {
                            dbeta[ci] += gsl[i];
                            dgamma[ci] += gsl[i] * (xsl[i] - m) * is;
                            dx[i] = gsl[i] * k;
                        }
                    }
                }
                vec![
                    Some(Arr::from_shape_vec(g.raw_dim(), dx).unwrap()),
                    Some(Array1::from_vec(dgamma).into_dyn()),
                    Some(Array1::from_vec(dbeta).into_dyn()),
                ]
            }),
        )
    }
}
