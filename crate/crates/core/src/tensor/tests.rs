//! Gradient oracles: every op's analytic backward is compared against
//! central finite differences (f64, step 1e-5, relative tolerance 1e-4) on
//! random inputs in [-1, 1].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::{Error, Result};

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Checks one composed graph: `build` maps bound parameters to a scalar.
fn check_graph<F>(store: &ParamStore<f64>, build: F)
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<ValId> + Sync,
{
    let loss_of = |s: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let out = build(&mut g, s)?;
        Ok(g.value(out).item())
    };
    let mut g = Graph::new();
    let out = build(&mut g, store).unwrap();
    let analytic = g.backward(out).unwrap();
    let report = gradient_check(store, &analytic, FD_STEP, FD_TOL, loss_of).unwrap();
    assert!(
        report.pass(),
        "gradient check failed: {:?}",
        report.failures().first().map(|p| (p.name.clone(), p.max_rel_err))
    );
}

fn store_of(entries: &[(&str, &[usize])], rng: &mut ChaCha8Rng) -> ParamStore<f64> {
    let mut store = ParamStore::<f64>::new();
    for (name, shape) in entries {
        store.insert(*name, Tensor::rand_uniform(shape, -1.0, 1.0, rng), true);
    }
    store
}

#[test]
fn matmul_identity_passthrough() {
    let mut r = rng(1);
    let a = Tensor::rand_uniform(&[3, 3], -1.0, 1.0, &mut r);
    let eye = Tensor::from_vec(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    let mut g = Graph::new();
    let i = g.constant(eye).unwrap();
    let av = g.constant(a.clone()).unwrap();
    let out = g.matmul(i, av).unwrap();
    assert_eq!(g.value(out).data(), a.data());
}

#[test]
fn softmax_uniform_on_equal_inputs() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::from_vec(&[4], vec![0.0; 4])).unwrap();
    let y = g.softmax_last(x).unwrap();
    for &v in g.value(y).data() {
        assert!((v - 0.25).abs() < 1e-15);
    }
}

#[test]
fn conv2d_center_pixel_sums_input() {
    // 3x3 input, 3x3 kernel of ones, padding 1: output at the center equals
    // the sum of all inputs (direct summation oracle).
    let mut r = rng(2);
    let x = Tensor::rand_uniform(&[1, 3, 3], -1.0, 1.0, &mut r);
    let expected: f64 = x.data().iter().sum();
    let mut g = Graph::new();
    let xv = g.constant(x).unwrap();
    let w = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0)).unwrap();
    let y = g.conv2d(xv, w, None, 1, 1).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 3, 3]);
    let center = g.value(y).data()[4];
    assert!((center - expected).abs() < 1e-12);
}

#[test]
fn conv2d_matches_direct_summation_everywhere() {
    // Randomized stride/padding configurations against a nested-loop oracle.
    let mut r = rng(3);
    for &(ci, co, h, w, kh, kw, stride, pad) in &[
        (2usize, 3usize, 5usize, 6usize, 3usize, 3usize, 1usize, 1usize),
        (3, 2, 6, 6, 3, 3, 2, 1),
        (1, 4, 7, 5, 1, 1, 1, 0),
        (2, 2, 4, 4, 3, 3, 1, 0),
    ] {
        let x = Tensor::<f64>::rand_uniform(&[ci, h, w], -1.0, 1.0, &mut r);
        let wt = Tensor::rand_uniform(&[co, ci, kh, kw], -1.0, 1.0, &mut r);
        let b = Tensor::rand_uniform(&[co], -1.0, 1.0, &mut r);
        let mut g = Graph::new();
        let xv = g.constant(x.clone()).unwrap();
        let wv = g.constant(wt.clone()).unwrap();
        let bv = g.constant(b.clone()).unwrap();
        let y = g.conv2d(xv, wv, Some(bv), stride, pad).unwrap();
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        for o in 0..co {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[o];
                    for c in 0..ci {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += x.data()[(c * h + iy as usize) * w + ix as usize]
                                    * wt.data()[((o * ci + c) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    let got = g.value(y).data()[(o * oh + oy) * ow + ox];
                    assert!((got - acc).abs() < 1e-12, "mismatch at ({o},{oy},{ox})");
                }
            }
        }
    }
}

#[test]
fn zero_conv_produces_exact_zeros() {
    let mut r = rng(4);
    let x = Tensor::<f64>::rand_uniform(&[3, 8, 8], -1.0, 1.0, &mut r);
    let mut g = Graph::new();
    let xv = g.constant(x).unwrap();
    let w = g.constant(Tensor::zeros(&[5, 3, 1, 1])).unwrap();
    let b = g.constant(Tensor::zeros(&[5])).unwrap();
    let y = g.conv2d(xv, w, Some(b), 1, 0).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn scalar_quadratic_gradient() {
    // loss = mean((x - c)^2), x scalar: grad = 2 (x - c).
    let mut store = ParamStore::<f64>::new();
    store.insert("x", Tensor::scalar(1.7), true);
    let c = Tensor::scalar(0.4);
    let mut g = Graph::new();
    let x = g.param(&store, "x").unwrap();
    let cv = g.constant(c).unwrap();
    let loss = g.mean_sq_diff(x, cv).unwrap();
    let grads = g.backward(loss).unwrap();
    let got = grads["x"].item();
    assert!((got - 2.0 * (1.7 - 0.4)).abs() < 1e-12);
}

#[test]
fn softmax_sum_has_zero_gradient() {
    // loss = sum(softmax(x)) == 1, so the gradient vanishes identically.
    let mut store = ParamStore::<f64>::new();
    let mut r = rng(5);
    store.insert("x", Tensor::rand_uniform(&[6], -1.0, 1.0, &mut r), true);
    let mut g = Graph::new();
    let x = g.param(&store, "x").unwrap();
    let s = g.softmax_last(x).unwrap();
    let summed = g.mean_all(s).unwrap(); // mean = sum / n, still constant
    let grads = g.backward(summed).unwrap();
    for &v in grads["x"].data() {
        assert!(v.abs() < 1e-15);
    }
}

#[test]
fn grad_add_mul_sub_scale_broadcast() {
    let mut r = rng(6);
    let store = store_of(&[("a", &[3, 4]), ("b", &[4]), ("c", &[3, 1])], &mut r);
    check_graph(&store, |g, s| {
        let a = g.param(s, "a")?;
        let b = g.param(s, "b")?;
        let c = g.param(s, "c")?;
        let ab = g.add(a, b)?; // broadcast [4] over [3,4]
        let m = g.mul(ab, c)?; // broadcast [3,1]
        let d = g.sub(m, a)?;
        let sc = g.scale(d, -1.37)?;
        let sq = g.mul(sc, sc)?;
        g.mean_all(sq)
    });
}

#[test]
fn grad_matmul_transpose() {
    let mut r = rng(7);
    let store = store_of(&[("a", &[4, 3]), ("b", &[4, 5])], &mut r);
    check_graph(&store, |g, s| {
        let a = g.param(s, "a")?;
        let b = g.param(s, "b")?;
        let at = g.transpose2(a)?;
        let y = g.matmul(at, b)?;
        let sq = g.mul(y, y)?;
        g.mean_all(sq)
    });
}

#[test]
fn grad_conv2d_all_configs() {
    let mut r = rng(8);
    for &(stride, pad) in &[(1usize, 1usize), (2, 1), (1, 0)] {
        let mut store = ParamStore::<f64>::new();
        store.insert("x", Tensor::rand_uniform(&[2, 5, 5], -1.0, 1.0, &mut r), true);
        store.insert("w", Tensor::rand_uniform(&[3, 2, 3, 3], -1.0, 1.0, &mut r), true);
        store.insert("b", Tensor::rand_uniform(&[3], -1.0, 1.0, &mut r), true);
        check_graph(&store, move |g, s| {
            let x = g.param(s, "x")?;
            let w = g.param(s, "w")?;
            let b = g.param(s, "b")?;
            let y = g.conv2d(x, w, Some(b), stride, pad)?;
            let sq = g.mul(y, y)?;
            g.mean_all(sq)
        });
    }
}

#[test]
fn grad_softmax_silu() {
    let mut r = rng(9);
    let store = store_of(&[("x", &[3, 5])], &mut r);
    check_graph(&store, |g, s| {
        let x = g.param(s, "x")?;
        let sm = g.softmax_last(x)?;
        let act = g.silu(sm)?;
        let sq = g.mul(act, act)?;
        g.mean_all(sq)
    });
}

#[test]
fn grad_group_norm() {
    let mut r = rng(10);
    let mut store = ParamStore::<f64>::new();
    store.insert("x", Tensor::rand_uniform(&[8, 3, 2], -1.0, 1.0, &mut r), true);
    store.insert("gamma", Tensor::rand_uniform(&[8], 0.5, 1.5, &mut r), true);
    store.insert("beta", Tensor::rand_uniform(&[8], -0.5, 0.5, &mut r), true);
    check_graph(&store, |g, s| {
        let x = g.param(s, "x")?;
        let gm = g.param(s, "gamma")?;
        let bt = g.param(s, "beta")?;
        let y = g.group_norm(x, gm, bt, 4, 1e-5)?;
        let act = g.silu(y)?;
        let sq = g.mul(act, act)?;
        g.mean_all(sq)
    });
}

#[test]
fn grad_concat_reshape_upsample() {
    let mut r = rng(11);
    let store = store_of(&[("a", &[2, 3, 4]), ("b", &[3, 3, 4])], &mut r);
    check_graph(&store, |g, s| {
        let a = g.param(s, "a")?;
        let b = g.param(s, "b")?;
        let cat = g.concat(&[a, b], 0)?;
        let up = g.upsample2x(cat)?;
        let flat = g.reshape(up, &[5 * 6 * 8])?;
        let sq = g.mul(flat, flat)?;
        g.mean_all(sq)
    });
}

#[test]
fn grad_two_layer_conv_net_matches_finite_differences() {
    // Random 2-layer conv net; all parameter grads vs central differences.
    let mut r = rng(12);
    let mut store = ParamStore::<f64>::new();
    store.insert("w1", Tensor::rand_uniform(&[4, 2, 3, 3], -0.5, 0.5, &mut r), true);
    store.insert("b1", Tensor::rand_uniform(&[4], -0.5, 0.5, &mut r), true);
    store.insert("w2", Tensor::rand_uniform(&[2, 4, 3, 3], -0.5, 0.5, &mut r), true);
    store.insert("b2", Tensor::rand_uniform(&[2], -0.5, 0.5, &mut r), true);
    let x = Tensor::rand_uniform(&[2, 6, 6], -1.0, 1.0, &mut r);
    let target = Tensor::rand_uniform(&[2, 6, 6], -1.0, 1.0, &mut r);
    check_graph(&store, move |g, s| {
        let xv = g.constant(x.clone())?;
        let tv = g.constant(target.clone())?;
        let w1 = g.param(s, "w1")?;
        let b1 = g.param(s, "b1")?;
        let w2 = g.param(s, "w2")?;
        let b2 = g.param(s, "b2")?;
        let h = g.conv2d(xv, w1, Some(b1), 1, 1)?;
        let h = g.silu(h)?;
        let y = g.conv2d(h, w2, Some(b2), 1, 1)?;
        g.mean_sq_diff(y, tv)
    });
}

#[test]
fn corrupted_backward_fails_with_named_parameter() {
    // Negative control: a deliberately wrong analytic gradient must be
    // caught and attributed to the right parameter.
    let mut r = rng(13);
    let store = store_of(&[("good", &[3]), ("evil", &[2])], &mut r);
    let build = |g: &mut Graph<f64>, s: &ParamStore<f64>| -> Result<ValId> {
        let a = g.param(s, "good")?;
        let b = g.param(s, "evil")?;
        let sa = g.mul(a, a)?;
        let sb = g.mul(b, b)?;
        let ma = g.mean_all(sa)?;
        let mb = g.mean_all(sb)?;
        g.add(ma, mb)
    };
    let mut g = Graph::new();
    let out = build(&mut g, &store).unwrap();
    let mut analytic = g.backward(out).unwrap();
    analytic.get_mut("evil").unwrap().data_mut()[1] += 0.5; // corrupt one entry
    let report = gradient_check(&store, &analytic, FD_STEP, FD_TOL, |s| {
        let mut g = Graph::new();
        let out = build(&mut g, s)?;
        Ok(g.value(out).item())
    })
    .unwrap();
    assert!(!report.pass());
    let failures = report.failures();
    assert_eq!(failures[0].name, "evil");
    assert_eq!(failures[0].worst_index, 1);
    assert!(report.params.iter().find(|p| p.name == "good").unwrap().max_rel_err <= FD_TOL);
}

#[test]
fn evaluate_is_deterministic() {
    let mut r = rng(14);
    let x = Tensor::rand_uniform(&[4, 6, 6], -1.0, 1.0, &mut r);
    let w = Tensor::rand_uniform(&[4, 4, 3, 3], -1.0, 1.0, &mut r);
    let run = || {
        let mut g = Graph::<f64>::new();
        let xv = g.constant(x.clone()).unwrap();
        let wv = g.constant(w.clone()).unwrap();
        let y = g.conv2d(xv, wv, None, 1, 1).unwrap();
        let s = g.softmax_last(y).unwrap();
        g.value(s).data().to_vec()
    };
    let a = run();
    let b = run();
    assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn shape_mismatch_names_offending_node() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::zeros(&[2, 3])).unwrap();
    let b = g.constant(Tensor::zeros(&[4, 2])).unwrap();
    let err = g.matmul(a, b).unwrap_err();
    match err {
        Error::ShapeMismatch { context, .. } => assert!(context.starts_with("matmul#")),
        other => panic!("unexpected error {other:?}"),
    }
}

#[test]
fn non_finite_output_names_node() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::scalar(1e308)).unwrap();
    let err = g.mul(a, a).unwrap_err();
    match err {
        Error::NonFinite { node } => assert!(node.starts_with("mul#")),
        other => panic!("unexpected error {other:?}"),
    }
}

#[test]
fn backward_errors() {
    // Non-scalar output.
    let mut r = rng(15);
    let mut store = ParamStore::<f64>::new();
    store.insert("x", Tensor::rand_uniform(&[3], -1.0, 1.0, &mut r), true);
    let mut g = Graph::new();
    let x = g.param(&store, "x").unwrap();
    let y = g.silu(x).unwrap();
    assert!(matches!(g.backward(y), Err(Error::Autodiff(_))));

    // No trainable leaves anywhere ("no tape").
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::scalar(2.0)).unwrap();
    let m = g.mean_all(a).unwrap();
    assert!(matches!(g.backward(m), Err(Error::Autodiff(_))));
}

#[test]
fn shared_leaf_accumulates_single_gradient() {
    // Binding the same parameter twice must return one leaf so gradients
    // from both uses accumulate (shared-weight branches rely on this).
    let mut store = ParamStore::<f64>::new();
    store.insert("w", Tensor::scalar(0.8), true);
    let mut g = Graph::new();
    let w1 = g.param(&store, "w").unwrap();
    let w2 = g.param(&store, "w").unwrap();
    assert_eq!(w1, w2);
    let y = g.mul(w1, w2).unwrap(); // w^2
    let m = g.mean_all(y).unwrap();
    let grads = g.backward(m).unwrap();
    assert!((grads["w"].item() - 2.0 * 0.8).abs() < 1e-12);
}

#[test]
fn f32_mode_tracks_f64_within_tolerance() {
    let mut r = rng(16);
    let x64 = Tensor::<f64>::rand_uniform(&[3, 8, 8], -1.0, 1.0, &mut r);
    let w64 = Tensor::<f64>::rand_uniform(&[4, 3, 3, 3], -0.5, 0.5, &mut r);
    let t64 = Tensor::<f64>::rand_uniform(&[4, 8, 8], -1.0, 1.0, &mut r);
    let loss64 = {
        let mut g = Graph::<f64>::new();
        let x = g.constant(x64.clone()).unwrap();
        let w = g.constant(w64.clone()).unwrap();
        let y = g.conv2d(x, w, None, 1, 1).unwrap();
        let t = g.constant(t64.clone()).unwrap();
        let l = g.mean_sq_diff(y, t).unwrap();
        g.value(l).item()
    };
    let loss32 = {
        let mut g = Graph::<f32>::new();
        let x = g.constant(x64.cast::<f32>()).unwrap();
        let w = g.constant(w64.cast::<f32>()).unwrap();
        let y = g.conv2d(x, w, None, 1, 1).unwrap();
        let t = g.constant(t64.cast::<f32>()).unwrap();
        let l = g.mean_sq_diff(y, t).unwrap();
        g.value(l).item() as f64
    };
    assert!((loss64 - loss32).abs() / loss64.abs() < 1e-3);
}
