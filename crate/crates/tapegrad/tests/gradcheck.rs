//! Finite-difference checks for every op and layer on small random inputs.

use ndarray::IxDyn;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use tapegrad::layers::{BatchNorm, Conv2d, Conv3d, Embedding, Linear, LstmCell};
use tapegrad::{finite_difference_check, init, sample_param_indices, ParamStore, Session, Var};

const TOL: f64 = 1e-6;

fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Runs a forward builder against a store and checks all (or up to 200)
/// parameter coordinates.
fn check(store: &mut ParamStore, mut forward: impl FnMut(&mut Session) -> Var, seed: u64) -> f64 {
    // analytic pass
    store.zero_grads();
    {
        let mut s = Session::train(store);
        let loss = forward(&mut s);
        s.backward(loss);
    }
    let samples = sample_param_indices(store, &mut rng(seed ^ 0x5eed), 200);
    let report = finite_difference_check(
        store,
        |st| {
            let mut s = Session::train(st);
            let loss = forward(&mut s);
            s.tape.scalar(loss)
        },
        &samples,
        1e-5,
        1e-8,
    );
    assert!(
        report.max_rel_err < TOL,
        "max rel err {} at {}[{}]: analytic {} vs numeric {}",
        report.max_rel_err,
        report.worst_param,
        report.worst_index,
        report.worst_analytic,
        report.worst_numeric
    );
    report.max_rel_err
}

#[test]
fn linear_relu_chain() {
    let mut store = ParamStore::new();
    let mut r = rng(1);
    let l1 = Linear::new(&mut store, "l1", &mut r, 5, 7);
    let l2 = Linear::new(&mut store, "l2", &mut r, 7, 3);
    let x = init::uniform(&mut r, &[4, 5], 1.0);
    check(
        &mut store,
        move |s| {
            let xi = s.leaf(x.clone());
            let h = l1.forward(s, xi);
            let h = s.tape.relu(h);
            let y = l2.forward(s, h);
            let y = s.tape.tanh(y);
            s.tape.mean_all(y)
        },
        11,
    );
}

#[test]
fn sigmoid_mul_sub_exp_ops() {
    let mut store = ParamStore::new();
    let mut r = rng(2);
    let a = store.register("a", init::uniform(&mut r, &[3, 4], 0.8));
    let b = store.register("b", init::uniform(&mut r, &[3, 4], 0.8));
    check(
        &mut store,
        move |s| {
            let av = s.param(a);
            let bv = s.param(b);
            let m = s.tape.mul(av, bv);
            let d = s.tape.sub(m, bv);
            let sg = s.tape.sigmoid(d);
            let e = s.tape.exp(av);
            let e = s.tape.scale(e, 0.1);
            let q = s.tape.add(sg, e);
            s.tape.sum_all(q)
        },
        22,
    );
}

#[test]
fn softmax_and_gather() {
    let mut store = ParamStore::new();
    let mut r = rng(3);
    let w = store.register("w", init::uniform(&mut r, &[6, 5], 1.0));
    let idx = vec![0usize, 3, 4, 1, 2, 0];
    check(
        &mut store,
        move |s| {
            let wv = s.param(w);
            let ls = s.tape.log_softmax(wv);
            let picked = s.tape.gather_rows(ls, &idx);
            let total = s.tape.sum_all(picked);
            s.tape.scale(total, -1.0)
        },
        33,
    );
}

#[test]
fn softmax_op_probabilities() {
    let mut store = ParamStore::new();
    let mut r = rng(31);
    let w = store.register("w", init::uniform(&mut r, &[4, 6], 1.5));
    check(
        &mut store,
        move |s| {
            let wv = s.param(w);
            let p = s.tape.softmax(wv);
            let sq = s.tape.mul(p, p);
            s.tape.sum_all(sq)
        },
        44,
    );
}

#[test]
fn concat_narrow_stack_reshape() {
    let mut store = ParamStore::new();
    let mut r = rng(4);
    let a = store.register("a", init::uniform(&mut r, &[2, 3], 1.0));
    let b = store.register("b", init::uniform(&mut r, &[2, 4], 1.0));
    check(
        &mut store,
        move |s| {
            let av = s.param(a);
            let bv = s.param(b);
            let cat = s.tape.concat(1, &[av, bv]); // (2,7)
            let left = s.tape.narrow(cat, 1, 1, 3);
            let right = s.tape.narrow(cat, 1, 3, 3);
            let st = s.tape.stack_new_axis(1, &[left, right]); // (2,2,3)
            let rs = s.tape.reshape(st, &[2, 6]);
            let m = s.tape.mean_axis(rs, 0);
            let t = s.tape.tanh(m);
            s.tape.sum_all(t)
        },
        55,
    );
}

#[test]
fn pooling_ops() {
    let mut store = ParamStore::new();
    let mut r = rng(5);
    let a = store.register("a", init::uniform(&mut r, &[2, 8, 3], 1.0));
    let b = store.register("b", init::uniform(&mut r, &[2, 3, 4, 5], 1.0));
    let c = store.register("c", init::uniform(&mut r, &[2, 3, 4, 3, 2], 1.0));
    check(
        &mut store,
        move |s| {
            let av = s.param(a);
            let bv = s.param(b);
            let cv = s.param(c);
            let pa = s.tape.avg_pool_time(av, 4); // (2,2,3)
            let pb = s.tape.global_avg_pool_hw(bv); // (2,3)
            let pc = s.tape.global_avg_pool_hw3(cv); // (2,4,3)
            let pa = s.tape.reshape(pa, &[2, 6]);
            let pc = s.tape.reshape(pc, &[2, 12]);
            let all = s.tape.concat(1, &[pa, pb, pc]);
            let t = s.tape.sigmoid(all);
            s.tape.sum_all(t)
        },
        66,
    );
}

#[test]
fn conv2d_layer() {
    let mut store = ParamStore::new();
    let mut r = rng(6);
    let conv = Conv2d::new(&mut store, "c", &mut r, 2, 3, 2);
    let x = init::uniform(&mut r, &[2, 2, 7, 6], 1.0);
    check(
        &mut store,
        move |s| {
            let xi = s.leaf(x.clone());
            let y = conv.forward(s, xi);
            let y = s.tape.relu(y);
            s.tape.mean_all(y)
        },
        77,
    );
}

#[test]
fn conv3d_layer() {
    let mut store = ParamStore::new();
    let mut r = rng(7);
    let conv = Conv3d::new(&mut store, "c", &mut r, 2, 2, (2, 2, 2));
    let x = init::uniform(&mut r, &[2, 2, 5, 6, 5], 1.0);
    check(
        &mut store,
        move |s| {
            let xi = s.leaf(x.clone());
            let y = conv.forward(s, xi);
            let y = s.tape.tanh(y);
            s.tape.mean_all(y)
        },
        88,
    );
}

#[test]
fn batch_norm_train_mode() {
    let mut store = ParamStore::new();
    let mut r = rng(8);
    let bn = BatchNorm::new(&mut store, "bn", 3);
    let lin = Linear::new(&mut store, "l", &mut r, 12, 2);
    let x = init::uniform(&mut r, &[4, 3, 2, 2], 1.0);
    check(
        &mut store,
        move |s| {
            let xi = s.leaf(x.clone());
            let y = bn.forward(s, xi);
            let y = s.tape.relu(y);
            let y = s.tape.reshape(y, &[4, 12]);
            let y = lin.forward(s, y);
            s.tape.mean_all(y)
        },
        99,
    );
}

#[test]
fn batch_norm_eval_mode() {
    let mut store = ParamStore::new();
    let mut r = rng(9);
    let bn = BatchNorm::new(&mut store, "bn", 3);
    // push running stats away from the init so eval normalization is nontrivial
    store.set_value(bn.running_mean, init::uniform(&mut r, &[3], 0.5));
    store.set_value(bn.running_var, init::full(&[3], 1.7));
    let x = init::uniform(&mut r, &[4, 3, 2, 2], 1.0);
    store.zero_grads();
    {
        let mut s = Session::eval(&mut store);
        let xi = s.leaf(x.clone());
        let y = bn.forward(&mut s, xi);
        let y = s.tape.tanh(y);
        let loss = s.tape.mean_all(y);
        s.backward(loss);
    }
    let samples = sample_param_indices(&store, &mut rng(123), 50);
    let report = finite_difference_check(
        &mut store,
        |st| {
            let mut s = Session::eval(st);
            let xi = s.leaf(x.clone());
            let y = bn.forward(&mut s, xi);
            let y = s.tape.tanh(y);
            let loss = s.tape.mean_all(y);
            s.tape.scalar(loss)
        },
        &samples,
        1e-5,
        1e-8,
    );
    assert!(report.max_rel_err < TOL, "eval BN max rel err {}", report.max_rel_err);
}

#[test]
fn lstm_cell_sequence() {
    let mut store = ParamStore::new();
    let mut r = rng(10);
    let cell = LstmCell::new(&mut store, "lstm", &mut r, 3, 4);
    let head = Linear::new(&mut store, "head", &mut r, 4, 2);
    let xs: Vec<_> = (0..5).map(|_| init::uniform(&mut r, &[2, 3], 1.0)).collect();
    check(
        &mut store,
        move |s| {
            let h0 = s.leaf(init::zeros(&[2, 4]));
            let c0 = s.leaf(init::zeros(&[2, 4]));
            let inputs: Vec<Var> = xs.iter().map(|x| s.leaf(x.clone())).collect();
            let hs = cell.run(s, &inputs, h0, c0);
            let last = *hs.last().unwrap();
            let y = head.forward(s, last);
            s.tape.mean_all(y)
        },
        111,
    );
}

#[test]
fn embedding_lookup() {
    let mut store = ParamStore::new();
    let mut r = rng(11);
    let emb = Embedding::new(&mut store, "emb", &mut r, 9, 4);
    let head = Linear::new(&mut store, "head", &mut r, 4, 3);
    let ids = vec![1usize, 7, 7, 0, 3];
    check(
        &mut store,
        move |s| {
            let e = emb.forward(s, &ids);
            let y = head.forward(s, e);
            let ls = s.tape.log_softmax(y);
            let picked = s.tape.gather_rows(ls, &[0, 1, 2, 0, 2]);
            let total = s.tape.sum_all(picked);
            s.tape.scale(total, -1.0)
        },
        222,
    );
}

#[test]
fn grads_accumulate_across_shared_use() {
    // a parameter leased once but used twice must receive both contributions
    let mut store = ParamStore::new();
    let mut r = rng(12);
    let a = store.register("a", init::uniform(&mut r, &[2, 2], 1.0));
    check(
        &mut store,
        move |s| {
            let av = s.param(a);
            let sq = s.tape.mul(av, av);
            let double = s.tape.add(sq, av);
            s.tape.sum_all(double)
        },
        333,
    );
}

#[test]
fn add_bias_broadcast_rank3() {
    let mut store = ParamStore::new();
    let mut r = rng(13);
    let x = store.register("x", init::uniform(&mut r, &[2, 3, 4], 1.0));
    let b = store.register("b", init::uniform(&mut r, &[4], 1.0));
    check(
        &mut store,
        move |s| {
            let xv = s.param(x);
            let bv = s.param(b);
            let y = s.tape.add_bias(xv, bv);
            let y = s.tape.tanh(y);
            s.tape.sum_all(y)
        },
        444,
    );
}
