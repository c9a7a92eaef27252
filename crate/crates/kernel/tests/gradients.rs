//! Reverse-mode gradients of every primitive against central differences.

use rhino_kernel::nn::{gru_forward, gumbel_softmax_with_noise, kl_diag_gaussians, mlp_forward, Activation};
use rhino_kernel::{check_gradients, DenseArray, Init, ParameterStore, Result, SeededRng, Tape, Var};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

/// Store with the named arrays filled from a seeded normal stream.
fn store_with(entries: &[(&str, &[usize])], seed: u64) -> ParameterStore {
    let mut rng = SeededRng::new(seed);
    let mut store = ParameterStore::new(seed);
    for (name, shape) in entries {
        store.insert(name, rng.normal_array(shape));
    }
    store
}

fn p(t: &mut Tape, s: &mut ParameterStore, name: &str) -> Result<Var> {
    let shape = s.get(name).expect("seeded").shape().to_vec();
    t.param(s, name, &shape, Init::Zeros)
}

/// Reduce to a scalar with a fixed weighting so that every output element
/// contributes a distinct amount to the loss.
fn weighted_sum(t: &mut Tape, v: Var) -> Result<Var> {
    let shape = t.shape(v).to_vec();
    let w = DenseArray::from_fn(&shape, |idx| {
        let flat: usize = idx.iter().fold(0, |acc, &i| acc * 7 + i + 1);
        ((flat as f64) * 0.37).sin() + 1.3
    });
    let w = t.constant(w);
    let m = t.mul(v, w)?;
    Ok(t.sum(m))
}

fn assert_check<F>(label: &str, f: F, store: &mut ParameterStore)
where
    F: FnMut(&mut Tape, &mut ParameterStore) -> Result<Var>,
{
    let report = check_gradients(f, store, H, TOL).unwrap();
    assert!(report.passed(), "{label}\n{report}");
}

#[test]
fn add_sub_mul_div_with_broadcasting() {
    let mut s = store_with(&[("a", &[3, 4]), ("b", &[4]), ("c", &[3, 1])], 1);
    s.get_mut("c").unwrap().data_mut().iter_mut().for_each(|v| *v = v.abs() + 0.5);
    assert_check(
        "binary",
        |t, s| {
            let a = p(t, s, "a")?;
            let b = p(t, s, "b")?;
            let c = p(t, s, "c")?;
            let x = t.add(a, b)?;
            let y = t.mul(x, c)?;
            let z = t.sub(y, b)?;
            let w = t.div(z, c)?;
            weighted_sum(t, w)
        },
        &mut s,
    );
}

#[test]
fn matmul() {
    let mut s = store_with(&[("a", &[3, 5]), ("b", &[5, 2])], 2);
    assert_check(
        "matmul",
        |t, s| {
            let a = p(t, s, "a")?;
            let b = p(t, s, "b")?;
            let m = t.matmul(a, b)?;
            weighted_sum(t, m)
        },
        &mut s,
    );
}

#[test]
fn elementwise_nonlinearities() {
    let mut s = store_with(&[("x", &[2, 6])], 3);
    // Keep relu inputs away from the kink.
    s.get_mut("x")
        .unwrap()
        .data_mut()
        .iter_mut()
        .for_each(|v| *v += 0.1 * v.signum());
    assert_check(
        "tanh/sigmoid/relu/softplus/exp/square",
        |t, s| {
            let x = p(t, s, "x")?;
            let a = t.tanh(x);
            let b = t.sigmoid(x);
            let c = t.relu(x);
            let d = t.softplus(x);
            let e = t.scale(x, 0.3);
            let e = t.exp(e);
            let f = t.square(x);
            let mut acc = a;
            for v in [b, c, d, e, f] {
                acc = t.add(acc, v)?;
            }
            let g = t.add_scalar(d, 1.0);
            let g = t.ln(g);
            let acc = t.mul(acc, g)?;
            weighted_sum(t, acc)
        },
        &mut s,
    );
}

#[test]
fn concat_slice_reshape_permute() {
    let mut s = store_with(&[("a", &[2, 3, 2]), ("b", &[2, 1, 2])], 4);
    assert_check(
        "structural",
        |t, s| {
            let a = p(t, s, "a")?;
            let b = p(t, s, "b")?;
            let c = t.concat(&[a, b], 1)?;
            let sl = t.slice(c, 1, 1, 3)?;
            let pm = t.permute(sl, &[2, 0, 1])?;
            let r = t.reshape(pm, &[4, 3])?;
            let r2 = t.tanh(r);
            weighted_sum(t, r2)
        },
        &mut s,
    );
}

#[test]
fn gather_segment_index_stack() {
    let mut s = store_with(&[("v", &[4, 3])], 5);
    assert_check(
        "gather/segment",
        |t, s| {
            let v = p(t, s, "v")?;
            let g = t.gather_rows(v, &[0, 2, 2, 3, 1])?;
            let seg = t.segment_sum(g, &[0, 0, 1, 1, 1], 2)?;
            let r0 = t.index_axis0(seg, 1)?;
            let r1 = t.index_axis0(v, 0)?;
            let st = t.stack0(&[r0, r1])?;
            let sq = t.square(st);
            weighted_sum(t, sq)
        },
        &mut s,
    );
}

#[test]
fn reductions() {
    let mut s = store_with(&[("x", &[3, 4])], 6);
    assert_check(
        "sum/mean/sum_axis",
        |t, s| {
            let x = p(t, s, "x")?;
            let a = t.sum_axis(x, 0)?;
            let a = t.square(a);
            let b = t.sum_axis(x, 1)?;
            let b = t.tanh(b);
            let wa = weighted_sum(t, a)?;
            let wb = weighted_sum(t, b)?;
            let sq = t.square(x);
            let m = t.mean(sq);
            let acc = t.add(wa, wb)?;
            t.add(acc, m)
        },
        &mut s,
    );
}

#[test]
fn softmax_and_log_softmax() {
    let mut s = store_with(&[("x", &[3, 4])], 7);
    assert_check(
        "softmax",
        |t, s| {
            let x = p(t, s, "x")?;
            let a = t.softmax(x, 1)?;
            let b = t.log_softmax(x, 0)?;
            let wa = weighted_sum(t, a)?;
            let wb = weighted_sum(t, b)?;
            t.add(wa, wb)
        },
        &mut s,
    );
}

#[test]
fn two_layer_mlp() {
    let mut s = store_with(&[("x", &[5, 3])], 8);
    assert_check(
        "mlp",
        |t, s| {
            let x = p(t, s, "x")?;
            let y = mlp_forward(t, s, "net", x, &[3, 6, 2], Activation::Tanh)?;
            Ok(t.sum(y))
        },
        &mut s,
    );
}

#[test]
fn two_layer_relu_mlp() {
    let mut s = store_with(&[("x", &[4, 3])], 9);
    assert_check(
        "relu mlp",
        |t, s| {
            let x = p(t, s, "x")?;
            let y = mlp_forward(t, s, "net", x, &[3, 5, 2], Activation::Relu)?;
            Ok(t.sum(y))
        },
        &mut s,
    );
}

#[test]
fn gru_three_steps_two_units() {
    let mut s = store_with(&[("seq", &[3, 2, 3])], 10);
    // Non-zero biases so their gradient paths are exercised too.
    let mut rng = SeededRng::new(11);
    s.insert("g.b_in", rng.normal_array(&[6]).scale(0.5));
    s.insert("g.b_hid", rng.normal_array(&[6]).scale(0.5));
    assert_check(
        "gru",
        |t, s| {
            let x = p(t, s, "seq")?;
            let h = gru_forward(t, s, "g", x, 2)?;
            weighted_sum(t, h)
        },
        &mut s,
    );
}

#[test]
fn gumbel_softmax_with_frozen_noise() {
    let mut s = store_with(&[("logits", &[4, 3])], 12);
    let noise = SeededRng::new(13).gumbel_array(&[4, 3]);
    for tau in [0.5, 1.0, 3.0] {
        assert_check(
            "gumbel",
            |t, s| {
                let l = p(t, s, "logits")?;
                let y = gumbel_softmax_with_noise(t, l, tau, &noise)?;
                weighted_sum(t, y)
            },
            &mut s,
        );
    }
}

#[test]
fn kl_between_diagonal_gaussians() {
    let mut s = store_with(&[("mq", &[2, 3]), ("sq", &[2, 3]), ("mp", &[2, 3]), ("sp", &[2, 3])], 14);
    for name in ["sq", "sp"] {
        s.get_mut(name).unwrap().data_mut().iter_mut().for_each(|v| *v = v.abs() + 0.3);
    }
    assert_check(
        "kl",
        |t, s| {
            let mq = p(t, s, "mq")?;
            let sq = p(t, s, "sq")?;
            let mp = p(t, s, "mp")?;
            let sp = p(t, s, "sp")?;
            kl_diag_gaussians(t, mq, sq, mp, sp)
        },
        &mut s,
    );
}

/// MLP producing mean and scale, softmax head, KL to a fixed prior.
#[test]
fn composed_mlp_softmax_kl_loss() {
    let mut s = store_with(&[("x", &[4, 3])], 15);
    assert_check(
        "composed",
        |t, s| {
            let x = p(t, s, "x")?;
            let h = mlp_forward(t, s, "enc", x, &[3, 8, 6], Activation::Tanh)?;
            let mu = t.slice(h, 1, 0, 3)?;
            let raw = t.slice(h, 1, 3, 3)?;
            let sigma = t.softplus(raw);
            let sigma = t.add_scalar(sigma, 1e-3);
            let prior_mu = t.constant(DenseArray::zeros(&[4, 3]));
            let prior_sigma = t.constant(DenseArray::full(&[4, 3], 0.5f64.sqrt()));
            let kl = kl_diag_gaussians(t, mu, sigma, prior_mu, prior_sigma)?;
            let probs = t.softmax(mu, 1)?;
            let target = t.constant(DenseArray::from_fn(&[4, 3], |i| if i[1] == i[0] % 3 { 1.0 } else { 0.0 }));
            let lp = t.add_scalar(probs, 1e-9);
            let lp = t.ln(lp);
            let ce = t.mul(lp, target)?;
            let ce = t.sum(ce);
            let ce = t.neg(ce);
            t.add(kl, ce)
        },
        &mut s,
    );
}

#[test]
fn gradient_check_flags_wrong_backward() {
    // A "gradient" computed on a detached branch misses a term.
    let mut s = store_with(&[("x", &[3])], 16);
    let report = check_gradients(
        |t, s| {
            let x = p(t, s, "x")?;
            let d = t.detach(x);
            let y = t.mul(x, d)?;
            Ok(t.sum(y))
        },
        &mut s,
        H,
        TOL,
    )
    .unwrap();
    assert!(!report.passed(), "{report}");
}
