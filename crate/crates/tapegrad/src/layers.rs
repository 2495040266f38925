//! Layer structs: thin bundles of parameter ids plus a forward method.

use crate::init;
use crate::store::{ParamId, ParamStore, Session};
use crate::tape::Var;
use ndarray::{Array1, Ix1};
use rand::Rng;

/// Affine map `(N, in) -> (N, out)`; weight stored as `(in, out)`.
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, scope: &str, rng: &mut R, in_dim: usize, out_dim: usize) -> Self {
        let w = store.register(&format!("{scope}.w"), init::xavier_uniform(rng, &[in_dim, out_dim], in_dim, out_dim));
        let b = store.register(&format!("{scope}.b"), init::zeros(&[out_dim]));
        Linear { w, b }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Var {
        let w = s.param(self.w);
        let b = s.param(self.b);
        let y = s.tape.matmul(x, w);
        s.tape.add_bias(y, b)
    }
}

/// 3x3 convolution (pad 1) bundled with its stride.
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
}

impl Conv2d {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        scope: &str,
        rng: &mut R,
        in_ch: usize,
        out_ch: usize,
        stride: usize,
    ) -> Self {
        let w = store.register(
            &format!("{scope}.w"),
            init::kaiming_normal(rng, &[out_ch, in_ch, 3, 3], in_ch * 9),
        );
        let b = store.register(&format!("{scope}.b"), init::zeros(&[out_ch]));
        Conv2d { w, b, stride }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Var {
        let w = s.param(self.w);
        let b = s.param(self.b);
        s.tape.conv2d(x, w, b, self.stride)
    }
}

/// 3x3x3 convolution (pad 1) with per-axis stride `(t, y, x)`.
pub struct Conv3d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: (usize, usize, usize),
}

impl Conv3d {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        scope: &str,
        rng: &mut R,
        in_ch: usize,
        out_ch: usize,
        stride: (usize, usize, usize),
    ) -> Self {
        let w = store.register(
            &format!("{scope}.w"),
            init::kaiming_normal(rng, &[out_ch, in_ch, 3, 3, 3], in_ch * 27),
        );
        let b = store.register(&format!("{scope}.b"), init::zeros(&[out_ch]));
        Conv3d { w, b, stride }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Var {
        let w = s.param(self.w);
        let b = s.param(self.b);
        s.tape.conv3d(x, w, b, self.stride)
    }
}

/// Batch norm over channel axis 1 with running statistics.
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, scope: &str, channels: usize) -> Self {
        BatchNorm {
            gamma: store.register(&format!("{scope}.gamma"), init::ones(&[channels])),
            beta: store.register(&format!("{scope}.beta"), init::zeros(&[channels])),
            running_mean: store.register_buffer(&format!("{scope}.running_mean"), init::zeros(&[channels])),
            running_var: store.register_buffer(&format!("{scope}.running_var"), init::ones(&[channels])),
            momentum: 0.1,
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Var {
        let gamma = s.param(self.gamma);
        let beta = s.param(self.beta);
        if s.train {
            let (y, mean, var) = s.tape.batch_norm_train(x, gamma, beta);
            let m = self.momentum;
            let rm = s.store.value(self.running_mean).clone();
            let rv = s.store.value(self.running_var).clone();
            s.store.set_value(self.running_mean, &rm * (1.0 - m) + &mean.into_dyn() * m);
            s.store.set_value(self.running_var, &rv * (1.0 - m) + &var.into_dyn() * m);
            y
        } else {
            let mean: Array1<f64> = s.store.value(self.running_mean).clone().into_dimensionality::<Ix1>().unwrap();
            let var: Array1<f64> = s.store.value(self.running_var).clone().into_dimensionality::<Ix1>().unwrap();
            s.tape.batch_norm_eval(x, gamma, beta, &mean, &var)
        }
    }
}

/// One LSTM cell. Gate layout in the fused projection is `[i, f, g, o]`;
/// the forget-gate bias starts at 1.
pub struct LstmCell {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<R: Rng>(store: &mut ParamStore, scope: &str, rng: &mut R, in_dim: usize, hidden: usize) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w_ih = store.register(&format!("{scope}.w_ih"), init::uniform(rng, &[in_dim, 4 * hidden], bound));
        let w_hh = store.register(&format!("{scope}.w_hh"), init::uniform(rng, &[hidden, 4 * hidden], bound));
        let mut b = init::zeros(&[4 * hidden]);
        b.slice_axis_mut(ndarray::Axis(0), ndarray::Slice::from(hidden..2 * hidden)).fill(1.0);
        let bias = store.register(&format!("{scope}.bias"), b);
        LstmCell { w_ih, w_hh, bias, hidden }
    }

    /// One step: `(x, h, c) -> (h', c')` with `(N, *)` operands.
    pub fn step(&self, s: &mut Session, x: Var, h: Var, c: Var) -> (Var, Var) {
        let hdim = self.hidden;
        let w_ih = s.param(self.w_ih);
        let w_hh = s.param(self.w_hh);
        let bias = s.param(self.bias);
        let xg = s.tape.matmul(x, w_ih);
        let hg = s.tape.matmul(h, w_hh);
        let gsum = s.tape.add(xg, hg);
        let gates = s.tape.add_bias(gsum, bias);
        let i_g = s.tape.narrow(gates, 1, 0, hdim);
        let f_g = s.tape.narrow(gates, 1, hdim, hdim);
        let g_g = s.tape.narrow(gates, 1, 2 * hdim, hdim);
        let o_g = s.tape.narrow(gates, 1, 3 * hdim, hdim);
        let i_a = s.tape.sigmoid(i_g);
        let f_a = s.tape.sigmoid(f_g);
        let g_a = s.tape.tanh(g_g);
        let o_a = s.tape.sigmoid(o_g);
        let fc = s.tape.mul(f_a, c);
        let ig = s.tape.mul(i_a, g_a);
        let c2 = s.tape.add(fc, ig);
        let c2t = s.tape.tanh(c2);
        let h2 = s.tape.mul(o_a, c2t);
        (h2, c2)
    }

    /// Runs the cell over a step sequence from `(h0, c0)`, returning hidden
    /// states per step.
    pub fn run(&self, s: &mut Session, inputs: &[Var], h0: Var, c0: Var) -> Vec<Var> {
        let mut h = h0;
        let mut c = c0;
        let mut out = Vec::with_capacity(inputs.len());
        for &x in inputs {
            let (h2, c2) = self.step(s, x, h, c);
            h = h2;
            c = c2;
            out.push(h);
        }
        out
    }
}

/// Token embedding table `(V, E)`.
pub struct Embedding {
    pub table: ParamId,
    pub dim: usize,
}

impl Embedding {
    pub fn new<R: Rng>(store: &mut ParamStore, scope: &str, rng: &mut R, vocab: usize, dim: usize) -> Self {
        let bound = (3.0 / dim as f64).sqrt();
        let table = store.register(&format!("{scope}.table"), init::uniform(rng, &[vocab, dim], bound));
        Embedding { table, dim }
    }

    /// Looks up `ids`, returning a `(len(ids), dim)` node.
    pub fn forward(&self, s: &mut Session, ids: &[usize]) -> Var {
        let table = s.param(self.table);
        s.tape.embedding(table, ids)
    }
}
