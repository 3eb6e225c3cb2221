use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;
use crate::wavelet::WaveletKind;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect())
}

/// Reduces any tensor to a scalar with a fixed random weighting so every
/// output coordinate influences the loss differently.
fn weighted_sum(g: &mut Graph, x: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rand_tensor(&mut rng, g.shape(x), -1.0, 1.0);
    let w = g.constant(w);
    let p = g.mul(x, w);
    g.sum_all(p)
}

fn check<F>(params: &[Tensor], mut f: F) -> f64
where
    F: FnMut(&mut Graph, &[Var]) -> Var,
{
    let rep = grad_check(|g, v| Ok(f(g, v)), params, 1e-5, 200, 7).unwrap();
    rep.max_rel_err
}

#[test]
fn square_gradient_is_two_x() {
    let mut g = Graph::new();
    let x = g.param(Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]));
    let y = g.square(x);
    let l = g.sum_all(y);
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[2.0, -4.0, 1.0]);
}

#[test]
fn softmax_sum_has_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = Graph::new();
    let x = g.param(rand_tensor(&mut rng, &[4, 5], -3.0, 3.0));
    let y = g.softmax(x, 1);
    let l = g.sum_all(y);
    g.backward(l).unwrap();
    assert!(g.grad(x).unwrap().data().iter().all(|v| v.abs() < 1e-15));
}

#[test]
fn scalar_quadratic_check() {
    let rep = grad_check(
        |g, v| {
            let y = g.square(v[0]);
            Ok(g.sum_all(y))
        },
        &[Tensor::scalar(3.0)],
        1e-5,
        200,
        0,
    )
    .unwrap();
    assert!(rep.max_rel_err < 1e-9, "{rep:?}");
    assert!((rep.worst_analytic - 6.0).abs() < 1e-12);
}

#[test]
fn constant_function_has_zero_error() {
    let rep = grad_check(
        |g, v| {
            let z = g.scale(v[0], 0.0);
            let s = g.sum_all(z);
            Ok(g.add_scalar(s, 4.0))
        },
        &[Tensor::from_vec(&[2], vec![1.0, 2.0])],
        1e-5,
        200,
        0,
    )
    .unwrap();
    assert_eq!(rep.max_rel_err, 0.0);
}

#[test]
fn grad_check_rejects_bad_step_and_nonfinite() {
    let f = |g: &mut Graph, v: &[Var]| Ok(g.sum_all(v[0]));
    assert!(grad_check(f, &[Tensor::scalar(1.0)], 1e-2, 10, 0).is_err());
    let f = |g: &mut Graph, v: &[Var]| {
        let l = g.log_eps(v[0], 0.0);
        Ok(g.sum_all(l))
    };
    assert!(matches!(grad_check(f, &[Tensor::scalar(-1.0)], 1e-5, 10, 0), Err(Error::NonFinite(_))));
}

#[test]
fn backward_errors() {
    let mut g = Graph::new();
    let x = g.param(Tensor::from_vec(&[2], vec![1.0, 2.0]));
    assert!(matches!(g.backward(x), Err(Error::InvalidArgument(_))));

    // sqrt(0) is finite but 1/(x+eps) with eps = 0 at 0 is not
    let mut g = Graph::new();
    let x = g.param(Tensor::from_vec(&[2], vec![0.0, 1.0]));
    let y = g.log_eps(x, 0.0);
    let y = g.clamp_min(y, -1.0);
    let l = g.sum_all(y);
    let err = g.backward(l).unwrap_err();
    match err {
        Error::NanGradient { op, .. } => assert_eq!(op, "log_eps"),
        e => panic!("unexpected {e}"),
    }

    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(-1.0));
    let y = g.sqrt(x);
    assert!(matches!(g.backward(y), Err(Error::NonFinite(_))));
}

#[test]
fn constants_get_no_gradient() {
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(2.0));
    let c = g.constant(Tensor::scalar(3.0));
    let y = g.mul(x, c);
    g.backward(y).unwrap();
    assert_eq!(g.grad(x).unwrap().item(), 3.0);
    assert!(g.grad(c).is_none());
    assert!(g.grad(y).is_none());
}

#[test]
fn reused_variable_accumulates() {
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(1.5));
    let a = g.exp(x);
    let b = g.mul(a, x);
    let c = g.add(b, x);
    g.backward(c).unwrap();
    let expect = 1.5f64.exp() * 2.5 + 1.0;
    assert!((g.grad(x).unwrap().item() - expect).abs() < 1e-12);
}

#[test]
fn broadcasting_binary_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0);
    let b = rand_tensor(&mut rng, &[1, 4], 0.5, 2.0);
    let c = rand_tensor(&mut rng, &[3, 1], 0.5, 2.0);
    for kind in 0..4 {
        let err = check(&[a.clone(), b.clone(), c.clone()], |g, v| {
            let (x, y) = match kind {
                0 => (g.add(v[0], v[1]), g.sub(v[2], v[0])),
                1 => (g.mul(v[0], v[1]), g.mul(v[2], v[1])),
                2 => (g.div(v[0], v[1]), g.div(v[0], v[2])),
                _ => (g.sub(v[1], v[2]), g.add(v[2], v[1])),
            };
            let z = g.mul(x, y);
            weighted_sum(g, z, 3)
        });
        assert!(err < 1e-6, "kind {kind}: {err}");
    }
}

#[test]
fn broadcast_value_matches_manual() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::from_vec(&[2, 1, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    let b = g.constant(Tensor::from_vec(&[1, 2, 1], vec![10.0, 20.0]));
    let c = g.add(a, b);
    assert_eq!(g.shape(c), [2, 2, 3]);
    assert_eq!(g.value(c).data(), &[11.0, 12.0, 13.0, 21.0, 22.0, 23.0, 14.0, 15.0, 16.0, 24.0, 25.0, 26.0]);
}

#[test]
fn unary_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_tensor(&mut rng, &[5, 3], -2.0, 2.0);
    let pos = rand_tensor(&mut rng, &[5, 3], 0.2, 3.0);
    let unit = rand_tensor(&mut rng, &[5, 3], -0.95, 0.95);
    type Op = fn(&mut Graph, Var) -> Var;
    let ops: Vec<(&str, Op, &Tensor)> = vec![
        ("scale", |g, x| g.scale(x, -1.7), &x),
        ("add_scalar", |g, x| g.add_scalar(x, 0.3), &x),
        ("exp", |g, x| g.exp(x), &x),
        ("sigmoid", |g, x| g.sigmoid(x), &x),
        ("silu", |g, x| g.silu(x), &x),
        ("sqrt", |g, x| g.sqrt(x), &pos),
        ("log_eps", |g, x| g.log_eps(x, 1e-8), &pos),
        ("clamp_min", |g, x| g.clamp_min(x, 0.1), &x),
        ("arccos_safe", |g, x| g.arccos_safe(x, 1e-7), &unit),
        ("neg", |g, x| g.neg(x), &x),
    ];
    for (name, op, input) in ops {
        // keep clamp inputs away from the kink
        let mut input = input.clone();
        if name == "clamp_min" {
            input.data_mut().iter_mut().for_each(|v| {
                if (*v - 0.1).abs() < 1e-3 {
                    *v += 0.01
                }
            });
        }
        let err = check(&[input], |g, v| {
            let y = op(g, v[0]);
            weighted_sum(g, y, 4)
        });
        assert!(err < 1e-6, "{name}: {err}");
    }
}

#[test]
fn sqrt_gradient_at_zero_is_zero() {
    let mut g = Graph::new();
    let x = g.param(Tensor::from_vec(&[2], vec![0.0, 4.0]));
    let y = g.sqrt(x);
    let l = g.sum_all(y);
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[0.0, 0.25]);
}

#[test]
fn matrix_and_shape_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0);
    let b = rand_tensor(&mut rng, &[4, 2], -1.0, 1.0);
    let err = check(&[a.clone(), b.clone()], |g, v| {
        let m = g.matmul(v[0], v[1]);
        let t = g.transpose(m);
        let r = g.reshape(t, &[3, 2]);
        let e = g.exp(r);
        weighted_sum(g, e, 5)
    });
    assert!(err < 1e-6, "{err}");

    let c = rand_tensor(&mut rng, &[3, 2], -1.0, 1.0);
    let err = check(&[a.clone(), c], |g, v| {
        let k = g.concat(&[v[0], v[1]], 1);
        let s = g.slice(k, 1, 2, 6);
        let k2 = g.concat(&[s, v[0]], 0);
        let y = g.square(k2);
        weighted_sum(g, y, 6)
    });
    assert!(err < 1e-6, "{err}");
}

#[test]
fn reductions_and_softmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = rand_tensor(&mut rng, &[2, 3, 4], -2.0, 2.0);
    for axis in 0..3 {
        for keep in [false, true] {
            let err = check(&[x.clone()], |g, v| {
                let s = g.sum(v[0], axis, keep);
                let m = g.mean(v[0], axis, keep);
                let p = g.mul(s, m);
                weighted_sum(g, p, 7)
            });
            assert!(err < 1e-6, "sum/mean axis {axis}: {err}");
        }
        let err = check(&[x.clone()], |g, v| {
            let s = g.softmax(v[0], axis);
            weighted_sum(g, s, 8)
        });
        assert!(err < 1e-6, "softmax axis {axis}: {err}");
    }
    let err = check(&[x], |g, v| {
        let a = g.mean_all(v[0]);
        let e = g.exp(v[0]);
        let b = g.sum_all(e);
        g.mul(a, b)
    });
    assert!(err < 1e-6, "{err}");
}

#[test]
fn keepdim_shapes() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[2, 3, 4]));
    let a = g.sum(x, 1, true);
    let b = g.mean(x, 1, false);
    assert_eq!(g.shape(a), [2, 1, 4]);
    assert_eq!(g.shape(b), [2, 4]);
}

#[test]
fn pooling_and_upsampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for (h, w) in [(4, 6), (5, 7), (1, 3)] {
        let x = rand_tensor(&mut rng, &[2, h, w], -1.0, 1.0);
        let err = check(&[x], |g, v| {
            let p = g.avg_pool2(v[0]);
            let u = g.upsample2(p, h, w);
            let s = g.square(u);
            weighted_sum(g, s, 9)
        });
        assert!(err < 1e-6, "{h}x{w}: {err}");
    }
}

#[test]
fn avg_pool_values() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_vec(&[1, 3, 3], (1..=9).map(f64::from).collect()));
    let p = g.avg_pool2(x);
    assert_eq!(g.value(p).data(), &[3.0, 4.5, 7.5, 9.0]);
    let u = g.upsample2(p, 3, 3);
    assert_eq!(g.value(u).data(), &[3.0, 3.0, 4.5, 3.0, 3.0, 4.5, 7.5, 7.5, 9.0]);
}

fn conv_oracle(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize, pad: usize) -> Vec<f64> {
    let (c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (o, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; o * oh * ow];
    for oc in 0..o {
        for y in 0..oh {
            for xx in 0..ow {
                let mut acc = b.map_or(0.0, |b| b.data()[oc]);
                for ic in 0..c {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (y * stride + ky) as isize - pad as isize;
                            let ix = (xx * stride + kx) as isize - pad as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                acc += w.data()[((oc * c + ic) * kh + ky) * kw + kx]
                                    * x.data()[(ic * h + iy as usize) * wd + ix as usize];
                            }
                        }
                    }
                }
                out[(oc * oh + y) * ow + xx] = acc;
            }
        }
    }
    out
}

#[test]
fn conv2d_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (c, o, h, w, k, stride, pad, bias) in [
        (4, 4, 8, 8, 3, 1, 1, true),
        (3, 2, 7, 5, 3, 2, 1, false),
        (4, 3, 8, 8, 1, 1, 0, true),
        (2, 4, 6, 7, 2, 2, 0, true),
        (1, 1, 4, 4, 3, 1, 0, false),
    ] {
        let x = rand_tensor(&mut rng, &[c, h, w], -1.0, 1.0);
        let wt = rand_tensor(&mut rng, &[o, c, k, k], -1.0, 1.0);
        let bt = rand_tensor(&mut rng, &[o], -1.0, 1.0);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let wv = g.constant(wt.clone());
        let bv = bias.then(|| g.constant(bt.clone()));
        let y = g.conv2d(xv, wv, bv, stride, pad);
        let expect = conv_oracle(&x, &wt, bias.then_some(&bt), stride, pad);
        let max = g.value(y).data().iter().zip(&expect).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(max < 1e-12, "conv {c}->{o} {h}x{w} k{k}: {max}");
    }
}

#[test]
fn conv2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for (k, stride, pad) in [(3, 1, 1), (3, 2, 1), (1, 1, 0), (2, 2, 0)] {
        let x = rand_tensor(&mut rng, &[3, 5, 6], -1.0, 1.0);
        let w = rand_tensor(&mut rng, &[2, 3, k, k], -1.0, 1.0);
        let b = rand_tensor(&mut rng, &[2], -1.0, 1.0);
        let err = check(&[x, w, b], |g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), stride, pad);
            let y = g.square(y);
            weighted_sum(g, y, 10)
        });
        assert!(err < 1e-6, "k{k} s{stride} p{pad}: {err}");
    }
}

#[test]
fn dwt2_op_matches_plane_transform_and_differentiates() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for kind in [WaveletKind::Haar, WaveletKind::Symlet3] {
        let x = rand_tensor(&mut rng, &[2, 5, 6], -1.0, 1.0);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let y = g.dwt2(xv, kind);
        assert_eq!(g.shape(y), [8, 3, 3]);
        let filt = crate::wavelet::filter_bank(kind);
        let sub = crate::wavelet::dwt2(&x.data()[30..60], 5, 6, &filt).unwrap();
        let out = g.value(y).data();
        assert_eq!(&out[9..18], sub.ll.as_slice());
        assert_eq!(&out[(2 + 1) * 9..(2 + 1) * 9 + 9], sub.lh.as_slice());
        assert_eq!(&out[(7) * 9..8 * 9], sub.hh.as_slice());

        let err = check(&[x], |g, v| {
            let y = g.dwt2(v[0], kind);
            let y = g.square(y);
            weighted_sum(g, y, 11)
        });
        assert!(err < 1e-6, "{kind}: {err}");
    }
}

fn ssm_oracle(u: &[f64], n: usize, d: usize, s: usize, lam: &[f64], b: &[f64], c: &[f64], dd: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; n * d];
    for ch in 0..d {
        for st in 0..s {
            let k = ch * s + st;
            let a = (-(1.0 + lam[k].exp()).ln()).exp();
            let mut h = 0.0;
            for t in 0..n {
                h = a * h + b[k] * u[t * d + ch];
                y[t * d + ch] += c[k] * h;
            }
        }
        for t in 0..n {
            y[t * d + ch] += dd[ch] * u[t * d + ch];
        }
    }
    y
}

#[test]
fn ssm_scan_matches_oracle_and_differentiates() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (n, d, s) = (12, 3, 4);
    let u = rand_tensor(&mut rng, &[n, d], -1.0, 1.0);
    let lam = rand_tensor(&mut rng, &[d, s], -2.0, 2.0);
    let b = rand_tensor(&mut rng, &[d, s], -1.0, 1.0);
    let c = rand_tensor(&mut rng, &[d, s], -1.0, 1.0);
    let dd = rand_tensor(&mut rng, &[d], -1.0, 1.0);
    let mut g = Graph::new();
    let vars: Vec<Var> = [&u, &lam, &b, &c, &dd].iter().map(|t| g.constant((*t).clone())).collect();
    let y = g.ssm_scan(vars[0], vars[1], vars[2], vars[3], vars[4]);
    let expect = ssm_oracle(u.data(), n, d, s, lam.data(), b.data(), c.data(), dd.data());
    let max = g.value(y).data().iter().zip(&expect).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(max < 1e-12, "{max}");

    let err = check(&[u, lam, b, c, dd], |g, v| {
        let y = g.ssm_scan(v[0], v[1], v[2], v[3], v[4]);
        let y = g.square(y);
        weighted_sum(g, y, 12)
    });
    assert!(err < 1e-6, "{err}");
}

/// Attention written with primitive ops, for comparison with the fused op.
fn composed_attention(g: &mut Graph, q: Var, k: Var, v: Var, alpha: Var, tau_sa: f64, tau_inv: f64) -> Var {
    let dk = g.shape(q)[1] as f64;
    let kt = g.transpose(k);
    let s = g.matmul(q, kt);
    let s = g.scale(s, 1.0 / dk.sqrt());
    let za = g.scale(s, 1.0 / tau_sa);
    let a = g.softmax(za, 1);
    let zb = g.scale(s, -1.0 / tau_inv);
    let b = g.softmax(zb, 1);
    let d = g.sub(a, b);
    let ad = g.mul(d, alpha);
    let f = g.add(b, ad);
    g.matmul(f, v)
}

#[test]
fn dual_attention_matches_composed_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    // more tokens than one row block
    for n in [7, 150] {
        let q = rand_tensor(&mut rng, &[n, 4], -1.0, 1.0);
        let k = rand_tensor(&mut rng, &[n, 4], -1.0, 1.0);
        let v = rand_tensor(&mut rng, &[n, 3], -1.0, 1.0);
        for (mix, alpha) in [(AttentionMix::Fused, 0.3), (AttentionMix::StandardOnly, 1.0), (AttentionMix::InverseOnly, 0.0)]
        {
            let mut g = Graph::new();
            let (qv, kv, vv) = (g.param(q.clone()), g.param(k.clone()), g.param(v.clone()));
            let av = g.param(Tensor::from_vec(&[1, 1], vec![alpha]));
            let fused = g.dual_attention(qv, kv, vv, Some(av), 0.7, 1.3, mix);
            let plain = composed_attention(&mut g, qv, kv, vv, av, 0.7, 1.3);
            let max = g.value(fused).data().iter().zip(g.value(plain).data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(max < 1e-12, "{mix:?} n={n}: {max}");

            // gradients agree too (alpha only participates when fused)
            let w = weighted_sum(&mut g, fused, 13);
            g.backward(w).unwrap();
            let g_fused: Vec<Tensor> = [qv, kv, vv, av].iter().map(|&x| g.grad(x).cloned().unwrap_or(Tensor::zeros(&[1, 1]))).collect();
            let w = weighted_sum(&mut g, plain, 13);
            g.backward(w).unwrap();
            for (i, &x) in [qv, kv, vv].iter().enumerate() {
                let diff = g.grad(x).unwrap().data().iter().zip(g_fused[i].data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(diff < 1e-11, "{mix:?} n={n} input {i}: {diff}");
            }
            if mix == AttentionMix::Fused {
                let d = (g.grad(av).unwrap().item() - g_fused[3].item()).abs();
                assert!(d < 1e-11, "alpha grad {d}");
            }
        }
    }
}

#[test]
fn dual_attention_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let q = rand_tensor(&mut rng, &[6, 3], -1.0, 1.0);
    let k = rand_tensor(&mut rng, &[6, 3], -1.0, 1.0);
    let v = rand_tensor(&mut rng, &[6, 2], -1.0, 1.0);
    let a = Tensor::scalar(0.4);
    for mix in [AttentionMix::Fused, AttentionMix::StandardOnly, AttentionMix::InverseOnly] {
        let err = check(&[q.clone(), k.clone(), v.clone(), a.clone()], |g, vars| {
            let y = g.dual_attention(vars[0], vars[1], vars[2], Some(vars[3]), 0.8, 1.5, mix);
            let y = g.square(y);
            weighted_sum(g, y, 14)
        });
        assert!(err < 1e-6, "{mix:?}: {err}");
    }
}

#[test]
fn attention_maps_are_row_stochastic() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let q = rand_tensor(&mut rng, &[9, 4], -2.0, 2.0);
    let k = rand_tensor(&mut rng, &[9, 4], -2.0, 2.0);
    let m = attention_maps(q.data(), k.data(), 4, 1.0, 1.0, 0.25);
    for map in [&m.standard, &m.inverse, &m.fused] {
        for row in map.chunks(9) {
            assert!(row.iter().all(|&v| v >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn three_layer_composite_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = rand_tensor(&mut rng, &[5, 4], -1.0, 1.0);
    let w1 = rand_tensor(&mut rng, &[4, 6], -0.5, 0.5);
    let b1 = rand_tensor(&mut rng, &[1, 6], -0.5, 0.5);
    let w2 = rand_tensor(&mut rng, &[6, 6], -0.5, 0.5);
    let w3 = rand_tensor(&mut rng, &[6, 3], -0.5, 0.5);
    let rep = grad_check(
        |g, v| {
            let h = g.matmul(v[0], v[1]);
            let h = g.add(h, v[2]);
            let h = g.silu(h);
            let h = g.matmul(h, v[3]);
            let h = g.sigmoid(h);
            let h = g.matmul(h, v[4]);
            let p = g.softmax(h, 1);
            let l = g.log_eps(p, 1e-8);
            let l = g.mean_all(l);
            Ok(g.neg(l))
        },
        &[x, w1, b1, w2, w3],
        1e-5,
        200,
        15,
    )
    .unwrap();
    assert!(rep.max_rel_err < 1e-4, "{rep:?}");
}

#[test]
fn backward_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let mut g = Graph::new();
        let x = g.param(rand_tensor(&mut rng, &[3, 6, 6], -1.0, 1.0));
        let w = g.param(rand_tensor(&mut rng, &[4, 3, 3, 3], -1.0, 1.0));
        let y = g.conv2d(x, w, None, 1, 1);
        let y = g.silu(y);
        let l = weighted_sum(&mut g, y, 16);
        g.backward(l).unwrap();
        (g.grad(x).unwrap().clone(), g.grad(w).unwrap().clone())
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(data in prop::collection::vec(-50.0f64..50.0, 12), axis in 0usize..2) {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(&[3, 4], data));
        let y = g.softmax(x, axis);
        let t = g.value(y);
        prop_assert!(t.data().iter().all(|&v| v >= 0.0));
        let sums = if axis == 1 {
            t.data().chunks(4).map(|r| r.iter().sum::<f64>()).collect::<Vec<_>>()
        } else {
            (0..4).map(|j| (0..3).map(|i| t.data()[i * 4 + j]).sum::<f64>()).collect()
        };
        for s in sums {
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn arccos_safe_is_finite_near_bounds(x in -1.0f64 - 1e-9..1.0 + 1e-9) {
        let mut g = Graph::new();
        let v = g.param(Tensor::scalar(x));
        let y = g.arccos_safe(v, 1e-7);
        prop_assert!(g.value(y).item().is_finite());
        g.backward(y).unwrap();
        prop_assert!(g.grad(v).unwrap().item().is_finite());
    }
}

#[test]
fn dwt2_gradient_on_small_planes() {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    for kind in [WaveletKind::Haar, WaveletKind::Symlet3] {
        for (h, w) in [(1, 1), (1, 2), (2, 2), (2, 3), (3, 3), (4, 5)] {
            let x = rand_tensor(&mut rng, &[2, h, w], -1.0, 1.0);
            let err = check(&[x], |g, v| {
                let y = g.dwt2(v[0], kind);
                weighted_sum(g, y, 5)
            });
            assert!(err < 1e-6, "{kind:?} {h}x{w}: {err}");
        }
    }
}
