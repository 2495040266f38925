//! Elementwise, linear-algebra, reshaping and loss ops on the tape.

use crate::tape::{Arr, Tape, Var};
use ndarray::{concatenate, Axis, Ix1, Ix2, Slice};
use std::rc::Rc;

impl Tape {
    fn unary(&mut self, x: Var, value: Arr, back: impl Fn(&Arr) -> Arr + 'static) -> Var {
        self.push(value, vec![x], Box::new(move |g, _| vec![Some(back(g))]))
    }

    /// Elementwise sum of two same-shape nodes.
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.raw_dim(), bv.raw_dim(), "add: shape mismatch");
        let value = av + bv;
        self.push(value, vec![a, b], Box::new(|g, m| {
            vec![m[0].then(|| g.clone()), m[1].then(|| g.clone())]
        }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        self.push(value, vec![a, b], Box::new(|g, m| {
            vec![m[0].then(|| g.clone()), m[1].then(|| g.mapv(|v| -v))]
        }))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let av = self.value_rc(a);
        let bv = self.value_rc(b);
        assert_eq!(av.raw_dim(), bv.raw_dim(), "mul: shape mismatch");
        let value = &*av * &*bv;
        self.push(
            value,
            vec![a, b],
            Box::new(move |g, m| {
                vec![m[0].then(|| g * &*bv), m[1].then(|| g * &*av)]
            }),
        )
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let value = self.value(x) * k;
        self.unary(x, value, move |g| g * k)
    }

    /// Elementwise product with a constant mask (no gradient into the mask).
    pub fn mul_const(&mut self, x: Var, mask: Arr) -> Var {
        let value = self.value(x) * &mask;
        self.unary(x, value, move |g| g * &mask)
    }

    /// Adds a rank-1 bias over the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let xv = self.value(x);
        let bv = self.value(b);
        assert_eq!(bv.ndim(), 1, "add_bias: bias must be rank 1");
        assert_eq!(
            xv.shape().last(),
            bv.shape().last(),
            "add_bias: last-axis mismatch"
        );
        let value = xv + bv;
        let ndim = xv.ndim();
        self.push(
            value,
            vec![x, b],
            Box::new(move |g, m| {
                let db = m[1].then(|| {
                    let mut db = g.clone();
                    for _ in 0..ndim - 1 {
                        db = db.sum_axis(Axis(0));
                    }
                    db
                });
                vec![m[0].then(|| g.clone()), db]
            }),
        )
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.value_rc(x);
        let value = xv.mapv(|v| v.max(0.0));
        self.unary(x, value, move |g| {
            let mut out = g.clone();
            out.zip_mut_with(&xv, |gi, &vi| {
                if vi <= 0.0 {
                    *gi = 0.0;
                }
            });
            out
        })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(|v| 1.0 / (1.0 + (-v).exp()));
        let y = Rc::new(value.clone());
        self.unary(x, value, move |g| {
            let mut out = g.clone();
            out.zip_mut_with(&y, |gi, &yi| *gi *= yi * (1.0 - yi));
            out
        })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(f64::tanh);
        let y = Rc::new(value.clone());
        self.unary(x, value, move |g| {
            let mut out = g.clone();
            out.zip_mut_with(&y, |gi, &yi| *gi *= 1.0 - yi * yi);
            out
        })
    }

    /// Matrix product of two rank-2 nodes: `(M,K) x (K,N) -> (M,N)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let av = self.value_rc(a);
        let bv = self.value_rc(b);
        let a2 = av.view().into_dimensionality::<Ix2>().expect("matmul lhs rank 2");
        let b2 = bv.view().into_dimensionality::<Ix2>().expect("matmul rhs rank 2");
        assert_eq!(a2.ncols(), b2.nrows(), "matmul: inner dim mismatch");
        let value = a2.dot(&b2).into_dyn();
        self.push(
            value,
            vec![a, b],
            Box::new(move |g, m| {
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let da = m[0].then(|| {
                    let b2 = bv.view().into_dimensionality::<Ix2>().unwrap();
                    g2.dot(&b2.t()).into_dyn()
                });
                let db = m[1].then(|| {
                    let a2 = av.view().into_dimensionality::<Ix2>().unwrap();
                    a2.t().dot(&g2).into_dyn()
                });
                vec![da, db]
            }),
        )
    }

    /// Concatenate along `axis`.
    pub fn concat(&mut self, axis: usize, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = concatenate(Axis(axis), &views).expect("concat: incompatible shapes");
        let sizes: Vec<usize> = parts.iter().map(|&p| self.value(p).shape()[axis]).collect();
        self.push(
            value,
            parts.to_vec(),
            Box::new(move |g, m| {
                let mut out = Vec::with_capacity(sizes.len());
                let mut start = 0isize;
                for (&s, &needed) in sizes.iter().zip(m) {
                    let piece = needed.then(|| {
                        g.slice_axis(Axis(axis), Slice::new(start, Some(start + s as isize), 1))
                            .to_owned()
                    });
                    out.push(piece);
                    start += s as isize;
                }
                out
            }),
        )
    }

    /// Contiguous sub-range along `axis` (gradient scatters back as zeros elsewhere).
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        let full = xv.raw_dim();
        let value = xv
            .slice_axis(Axis(axis), Slice::new(start as isize, Some((start + len) as isize), 1))
            .to_owned();
        self.unary(x, value, move |g| {
            let mut out = Arr::zeros(full.clone());
            out.slice_axis_mut(Axis(axis), Slice::new(start as isize, Some((start + len) as isize), 1))
                .assign(g);
            out
        })
    }

    /// Select index `i` along `axis`, dropping that axis.
    pub fn index_axis(&mut self, x: Var, axis: usize, i: usize) -> Var {
        let xv = self.value(x);
        let full = xv.raw_dim();
        let value = xv.index_axis(Axis(axis), i).to_owned();
        self.unary(x, value, move |g| {
            let mut out = Arr::zeros(full.clone());
            out.index_axis_mut(Axis(axis), i).assign(g);
            out
        })
    }

    /// Stack same-shape nodes along a fresh axis at `axis`.
    pub fn stack_new_axis(&mut self, axis: usize, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::stack(Axis(axis), &views).expect("stack: incompatible shapes");
        let n = parts.len();
        self.push(
            value,
            parts.to_vec(),
            Box::new(move |g, m| {
                (0..n)
                    .map(|i| m[i].then(|| g.index_axis(Axis(axis), i).to_owned()))
                    .collect()
            }),
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let xv = self.value(x);
        let old = xv.raw_dim();
        let value = xv
            .to_shape(shape)
            .expect("reshape: element count mismatch")
            .to_owned()
            .into_dyn();
        self.unary(x, value, move |g| {
            g.to_shape(old.clone()).unwrap().to_owned().into_dyn()
        })
    }

    /// Mean over one axis.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Var {
        let xv = self.value(x);
        let n = xv.shape()[axis];
        assert!(n > 0);
        let full = xv.raw_dim();
        let value = xv.mean_axis(Axis(axis)).unwrap();
        self.unary(x, value, move |g| {
            let mut out = Arr::zeros(full.clone());
            let scaled = g / n as f64;
            for mut lane in out.axis_iter_mut(Axis(axis)) {
                lane += &scaled;
            }
            out
        })
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let full = xv.raw_dim();
        let value = Arr::from_elem(ndarray::IxDyn(&[]), xv.sum());
        self.unary(x, value, move |g| {
            let gs = g[[]];
            Arr::from_elem(full.clone(), gs)
        })
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n)
    }

    /// Row-wise log-softmax of a rank-2 node.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let x2 = xv.view().into_dimensionality::<Ix2>().expect("log_softmax rank 2");
        let mut value = x2.to_owned();
        for mut row in value.rows_mut() {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|v| v - m);
            let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
            row.mapv_inplace(|v| v - lse);
        }
        let y = Rc::new(value.clone().into_dyn());
        self.unary(x, value.into_dyn(), move |g| {
            let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
            let y2 = y.view().into_dimensionality::<Ix2>().unwrap();
            let mut out = g2.to_owned();
            for ((mut orow, grow), yrow) in out.rows_mut().into_iter().zip(g2.rows()).zip(y2.rows()) {
                let gsum: f64 = grow.sum();
                orow.zip_mut_with(&yrow, |o, &yv| *o -= yv.exp() * gsum);
            }
            out.into_dyn()
        })
    }

    /// Row-wise softmax of a rank-2 node.
    pub fn softmax(&mut self, x: Var) -> Var {
        let ls = self.log_softmax(x);
        self.exp(ls)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(f64::exp);
        let y = Rc::new(value.clone());
        self.unary(x, value, move |g| {
            let mut out = g.clone();
            out.zip_mut_with(&y, |gi, &yi| *gi *= yi);
            out
        })
    }

    /// Picks `x[i, idx[i]]` from a rank-2 node, yielding a rank-1 node.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Var {
        let xv = self.value(x);
        let x2 = xv.view().into_dimensionality::<Ix2>().expect("gather_rows rank 2");
        assert_eq!(x2.nrows(), idx.len());
        let full = xv.raw_dim();
        let idx: Vec<usize> = idx.to_vec();
        let value = ndarray::Array1::from_iter(idx.iter().enumerate().map(|(i, &j)| x2[[i, j]]));
        self.unary(x, value.into_dyn(), move |g| {
            let g1 = g.view().into_dimensionality::<Ix1>().unwrap();
            let mut out = Arr::zeros(full.clone());
            let mut o2 = out.view_mut().into_dimensionality::<Ix2>().unwrap();
            for (i, &j) in idx.iter().enumerate() {
                o2[[i, j]] += g1[i];
            }
            out
        })
    }

    /// Dot product of a rank-1 node with itself and a scalar weight: used by
    /// losses; kept as a composition elsewhere. Row lookup into an embedding
    /// table: `table` is `(V, E)`, output is `(len(ids), E)`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Var {
        let tv = self.value(table);
        let t2 = tv.view().into_dimensionality::<Ix2>().expect("embedding rank 2");
        let e = t2.ncols();
        let full = tv.raw_dim();
        let ids: Vec<usize> = ids.to_vec();
        let mut value = ndarray::Array2::<f64>::zeros((ids.len(), e));
        for (mut row, &id) in value.rows_mut().into_iter().zip(&ids) {
            row.assign(&t2.row(id));
        }
        self.push(
            value.into_dyn(),
            vec![table],
            Box::new(move |g, _| {
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let mut out = Arr::zeros(full.clone());
                let mut o2 = out.view_mut().into_dimensionality::<Ix2>().unwrap();
                for (grow, &id) in g2.rows().into_iter().zip(&ids) {
                    let mut orow = o2.row_mut(id);
                    orow += &grow;
                }
                vec![Some(out)]
            }),
        )
    }

    /// Non-overlapping temporal average pooling of `(N, T, F)` down to
    /// `(N, T/window, F)`. `T` must be divisible by `window`.
    pub fn avg_pool_time(&mut self, x: Var, window: usize) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.ndim(), 3, "avg_pool_time expects (N,T,F)");
        let (n, t, f) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        assert!(window > 0 && t % window == 0, "avg_pool_time: T={t} not divisible by window={window}");
        let t_out = t / window;
        let mut value = ndarray::Array3::<f64>::zeros((n, t_out, f));
        {
            let x3 = xv.view().into_dimensionality::<ndarray::Ix3>().unwrap();
            for k in 0..window {
                let sl = x3.slice(ndarray::s![.., k..;window, ..]);
                value += &sl;
            }
            value /= window as f64;
        }
        let full = xv.raw_dim();
        self.unary(x, value.into_dyn(), move |g| {
            let g3 = g.view().into_dimensionality::<ndarray::Ix3>().unwrap();
            let mut out = Arr::zeros(full.clone());
            {
                let mut o3 = out.view_mut().into_dimensionality::<ndarray::Ix3>().unwrap();
                for k in 0..window {
                    let mut sl = o3.slice_mut(ndarray::s![.., k..;window, ..]);
                    sl.assign(&g3);
                }
                o3 /= window as f64;
            }
            out
        })
    }

    /// Global spatial average of a `(B, C, H, W)` node down to `(B, C)`.
    pub fn global_avg_pool_hw(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.ndim(), 4, "global_avg_pool_hw expects (B,C,H,W)");
        let (h, w) = (xv.shape()[2], xv.shape()[3]);
        let full = xv.raw_dim();
        let value = xv.sum_axis(Axis(3)).sum_axis(Axis(2)) / (h * w) as f64;
        self.unary(x, value, move |g| {
            let scale = 1.0 / (full[2] * full[3]) as f64;
            let mut out = Arr::zeros(full.clone());
            let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
            let mut o4 = out.view_mut().into_dimensionality::<ndarray::Ix4>().unwrap();
            for b in 0..full[0] {
                for c in 0..full[1] {
                    o4.slice_mut(ndarray::s![b, c, .., ..]).fill(g2[[b, c]] * scale);
                }
            }
            out
        })
    }

    /// Global spatial average of a `(N, C, T, H, W)` node, emitted per
    /// timestep as `(N, T, C)`.
    pub fn global_avg_pool_hw3(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.ndim(), 5, "global_avg_pool_hw3 expects (N,C,T,H,W)");
        let (h, w) = (xv.shape()[3], xv.shape()[4]);
        let full = xv.raw_dim();
        let pooled = xv.sum_axis(Axis(4)).sum_axis(Axis(3)) / (h * w) as f64; // (N, C, T)
        let value = pooled.permuted_axes(vec![0, 2, 1]).as_standard_layout().to_owned();
        self.unary(x, value, move |g| {
            let scale = 1.0 / (full[3] * full[4]) as f64;
            let g3 = g.view().into_dimensionality::<ndarray::Ix3>().unwrap(); // (N, T, C)
            let mut out = Arr::zeros(full.clone());
            let mut o5 = out.view_mut().into_dimensionality::<ndarray::Ix5>().unwrap();
            for n in 0..full[0] {
                for c in 0..full[1] {
                    for t in 0..full[2] {
                        o5.slice_mut(ndarray::s![n, c, t, .., ..]).fill(g3[[n, t, c]] * scale);
                    }
                }
            }
            out
        })
    }
}
