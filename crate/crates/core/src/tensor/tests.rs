//! Tape and primitive tests: forward oracles first, then gradient
//! checks against central differences for every primitive in the
//! catalog.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn tensor(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_f64_slice(shape, data).unwrap()
}

#[test]
fn from_vec_checks_shape() {
    assert!(Tensor::<f64>::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
    assert!(Tensor::<f64>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
    assert!(Tensor::<f64>::from_vec(&[2, 0], vec![]).is_err());
}

#[test]
fn validate_finite_flags_nan_and_inf() {
    let ok = Tensor::<f64>::from_vec(&[2], vec![1.0, -2.0]).unwrap();
    assert!(ok.validate_finite("test").is_ok());
    let nan = Tensor::<f64>::from_vec(&[2], vec![1.0, f64::NAN]).unwrap();
    assert!(nan.validate_finite("test").is_err());
    let inf = Tensor::<f64>::from_vec(&[2], vec![f64::INFINITY, 0.0]).unwrap();
    assert!(inf.validate_finite("test").is_err());
}

#[test]
fn cast_round_trips_f32_values() {
    let t32 = Tensor::<f32>::from_vec(&[3], vec![0.5, -1.25, 3.0]).unwrap();
    let t64: Tensor<f64> = t32.cast();
    let back: Tensor<f32> = t64.cast();
    assert_eq!(t32.data(), back.data());
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Direct-summation reference for conv1d with zero "same" padding.
fn conv1d_reference(x: &[f64], w: &[f64]) -> Vec<f64> {
    let t_len = x.len();
    let k = w.len();
    let pad = (k - 1) as isize / 2;
    (0..t_len)
        .map(|t| {
            (0..k)
                .map(|kk| {
                    let src = t as isize + kk as isize - pad;
                    if src >= 0 && (src as usize) < t_len {
                        w[kk] * x[src as usize]
                    } else {
                        0.0
                    }
                })
                .sum()
        })
        .collect()
}

#[test]
fn conv1d_matches_direct_summation() {
    let mut tape = Tape::new();
    let x = tape.leaf(tensor(&[1, 1, 3], &[1.0, 2.0, 3.0]), false);
    let w = tape.leaf(tensor(&[1, 1, 3], &[1.0, 0.0, -1.0]), false);
    let y = tape.conv1d(x, w, 3).unwrap();
    assert_eq!(tape.value(y).data(), &[-2.0, -2.0, 2.0]);
    assert_eq!(
        conv1d_reference(&[1.0, 2.0, 3.0], &[1.0, 0.0, -1.0]),
        vec![-2.0, -2.0, 2.0]
    );

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let xv = random_tensor(&[1, 1, 17], &mut rng);
        let wv = random_tensor(&[1, 1, 5], &mut rng);
        let mut tape = Tape::new();
        let x = tape.leaf(xv.clone(), false);
        let w = tape.leaf(wv.clone(), false);
        let y = tape.conv1d(x, w, 5).unwrap();
        let expected = conv1d_reference(xv.data(), wv.data());
        for (a, b) in tape.value(y).data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn conv1d_rejects_channel_mismatch() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::zeros(&[1, 3, 8]), false);
    let w = tape.leaf(Tensor::zeros(&[2, 4, 3]), false);
    let err = tape.conv1d(x, w, 3).unwrap_err();
    assert!(err.to_string().contains("channels"), "{err}");
}

#[test]
fn softmax_symmetry_and_normalization() {
    let mut tape = Tape::new();
    let x = tape.leaf(tensor(&[2], &[0.0, 0.0]), false);
    let y = tape.softmax(x, 0).unwrap();
    assert_eq!(tape.value(y).data(), &[0.5, 0.5]);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let xv = random_tensor(&[2, 5, 3], &mut rng);
    let mut tape = Tape::new();
    let x = tape.leaf(xv, false);
    let y = tape.softmax(x, 1).unwrap();
    let v = tape.value(y);
    for o in 0..2 {
        for i in 0..3 {
            let sum: f64 = (0..5).map(|a| v.data()[(o * 5 + a) * 3 + i]).sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn add_zero_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let xv = random_tensor(&[3, 4], &mut rng);
    let mut tape = Tape::new();
    let x = tape.leaf(xv.clone(), false);
    let z = tape.leaf(Tensor::zeros(&[3, 4]), false);
    let y = tape.add(x, z).unwrap();
    assert_eq!(tape.value(y).data(), xv.data());
}

#[test]
fn layer_norm_zero_mean_unit_variance() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let xv = random_tensor(&[2, 16, 4], &mut rng);
    let mut tape = Tape::new();
    let x = tape.leaf(xv, false);
    let y = tape.layer_norm(x, 1e-8).unwrap();
    let v = tape.value(y);
    for b in 0..2 {
        for t in 0..4 {
            let group: Vec<f64> = (0..16).map(|c| v.data()[(b * 16 + c) * 4 + t]).collect();
            let mean: f64 = group.iter().sum::<f64>() / 16.0;
            let var: f64 = group.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / 16.0;
            assert!(mean.abs() <= 1e-9, "group mean {mean}");
            assert!((var - 1.0).abs() <= 1e-6, "group variance {var}");
        }
    }
}

#[test]
fn backward_elementwise_and_fanout() {
    // L = sum(x .* x), x = [1, 2]  =>  dL/dx = [2, 4].
    let mut tape = Tape::new();
    let x = tape.leaf(tensor(&[2], &[1.0, 2.0]), true);
    let sq = tape.mul(x, x).unwrap();
    let loss = tape.sum_all(sq).unwrap();
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0]);

    // Fan-out: y = x + x doubles the seed exactly.
    let mut tape = Tape::new();
    let x = tape.leaf(tensor(&[3], &[0.5, -1.0, 2.0]), true);
    let y = tape.add(x, x).unwrap();
    let loss = tape.sum_all(y).unwrap();
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 2.0, 2.0]);
}

#[test]
fn backward_sigmoid_at_zero() {
    // d/dx sigmoid(0) = 1/4.
    let mut tape = Tape::new();
    let x = tape.leaf(tensor(&[1], &[0.0]), true);
    let s = tape.sigmoid(x).unwrap();
    let loss = tape.sum_all(s).unwrap();
    tape.backward(loss).unwrap();
    assert!((tape.grad(x).unwrap().data()[0] - 0.25).abs() < 1e-15);
}

#[test]
fn backward_rejects_foreign_root() {
    let mut tape_a = Tape::<f64>::new();
    let mut tape_b = Tape::<f64>::new();
    let x = tape_a.leaf(Tensor::scalar(1.0), true);
    let err = tape_b.backward(x).unwrap_err();
    assert!(err.to_string().contains("not produced by this tape"), "{err}");
}

#[test]
fn non_finite_output_is_a_numeric_fault() {
    let mut tape = Tape::new();
    let x = tape.leaf(tensor(&[1], &[1e308]), false);
    let doubled = tape.add(x, x);
    assert!(matches!(doubled, Err(crate::Error::Numeric(_))));
}

#[test]
fn grad_check_three_layer_composite() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x = random_tensor(&[1, 2, 8], &mut rng);
    let w1 = random_tensor(&[4, 2, 3], &mut rng);
    let w2 = random_tensor(&[4, 3], &mut rng);
    let report = grad_check(
        &move |t: &mut Tape<f64>, v: Var| {
            let w1 = t.leaf(w1.clone(), false);
            let w2 = t.leaf(w2.clone(), false);
            let h = t.conv1d(v, w1, 3)?;
            let h = t.tanh(h)?;
            let h = t.depthwise_conv1d(h, w2, 3)?;
            let h = t.gelu(h)?;
            let sq = t.mul(h, h)?;
            t.mean_all(sq)
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(report.max_rel_err <= 1e-4, "rel err {}", report.max_rel_err);
}

#[test]
fn grad_check_tanh_tight() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_tensor(&[6], &mut rng);
    let report = grad_check(
        &|t: &mut Tape<f64>, v: Var| {
            let h = t.tanh(v)?;
            t.sum_all(h)
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(report.max_rel_err <= 1e-6, "rel err {}", report.max_rel_err);
}

#[test]
fn grad_check_conv_l2() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_tensor(&[1, 2, 10], &mut rng);
    let w = random_tensor(&[3, 2, 5], &mut rng);
    let report = grad_check(
        &move |t: &mut Tape<f64>, v: Var| {
            let w = t.leaf(w.clone(), false);
            let y = t.conv1d(v, w, 5)?;
            let sq = t.mul(y, y)?;
            t.sum_all(sq)
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(report.max_rel_err <= 1e-4, "rel err {}", report.max_rel_err);
}

#[test]
fn grad_check_constant_function() {
    let x = tensor(&[3], &[1.0, 2.0, 3.0]);
    let report = grad_check(
        &|t: &mut Tape<f64>, v: Var| {
            let zero = t.mul_scalar(v, 0.0)?;
            t.sum_all(zero)
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(report.analytic.iter().all(|&g| g == 0.0));
    assert!(report.numeric.iter().all(|&g| g == 0.0));
    assert_eq!(report.max_rel_err, 0.0);
}

#[test]
fn grad_check_rejects_nondeterministic_f() {
    use std::sync::atomic::{AtomicUsize, Ordering};
    let calls = AtomicUsize::new(0);
    let x = tensor(&[2], &[0.1, 0.2]);
    let err = grad_check(
        &move |t: &mut Tape<f64>, v: Var| {
            let jitter = calls.fetch_add(1, Ordering::SeqCst) as f64 * 1e-3;
            let shifted = t.add_scalar(v, jitter)?;
            t.sum_all(shifted)
        },
        &x,
        1e-5,
    )
    .unwrap_err();
    assert!(err.to_string().contains("non-deterministic"), "{err}");
}

/// Every primitive in the catalog passes a gradient check on small
/// random inputs.
#[test]
fn grad_check_primitive_catalog() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    type Builder = Box<dyn Fn(&mut Tape<f64>, Var) -> crate::Result<Var>>;

    let b = random_tensor(&[2, 3, 6], &mut rng);
    let w_conv = random_tensor(&[4, 3, 3], &mut rng);
    let w_dw = random_tensor(&[3, 5], &mut rng);
    let mat = random_tensor(&[4, 5], &mut rng);
    let bmat = random_tensor(&[2, 4, 3], &mut rng);
    let u = random_tensor(&[2, 6], &mut rng);

    let cases: Vec<(&str, Vec<usize>, Builder)> = vec![
        ("add", vec![2, 3, 6], {
            let b = b.clone();
            Box::new(move |t, v| {
                let b = t.leaf(b.clone(), false);
                let y = t.add(v, b)?;
                t.sum_all(y)
            })
        }),
        ("sub", vec![2, 3, 6], {
            let b = b.clone();
            Box::new(move |t, v| {
                let b = t.leaf(b.clone(), false);
                let y = t.sub(v, b)?;
                let sq = t.mul(y, y)?;
                t.sum_all(sq)
            })
        }),
        ("mul", vec![2, 3, 6], {
            let b = b.clone();
            Box::new(move |t, v| {
                let b = t.leaf(b.clone(), false);
                let y = t.mul(v, b)?;
                t.sum_all(y)
            })
        }),
        ("add_scalar", vec![5], Box::new(|t, v| {
            let y = t.add_scalar(v, 0.7)?;
            let sq = t.mul(y, y)?;
            t.sum_all(sq)
        })),
        ("mul_scalar", vec![5], Box::new(|t, v| {
            let y = t.mul_scalar(v, -1.3)?;
            let sq = t.mul(y, y)?;
            t.sum_all(sq)
        })),
        ("matmul_lhs", vec![3, 4], {
            let mat = mat.clone();
            Box::new(move |t, v| {
                let m = t.leaf(mat.clone(), false);
                let y = t.matmul(v, m)?;
                let sq = t.mul(y, y)?;
                t.sum_all(sq)
            })
        }),
        ("matmul_rhs", vec![4, 5], Box::new(|t, v| {
            let a = t.leaf(
                Tensor::from_f64_slice(&[3, 4], &[0.3; 12]).unwrap(),
                false,
            );
            let y = t.matmul(a, v)?;
            let sq = t.mul(y, y)?;
            t.sum_all(sq)
        })),
        ("batch_matmul", vec![2, 3, 4], {
            let bmat = bmat.clone();
            Box::new(move |t, v| {
                let m = t.leaf(bmat.clone(), false);
                let y = t.batch_matmul(v, m)?;
                let sq = t.mul(y, y)?;
                t.sum_all(sq)
            })
        }),
        ("conv1d_x", vec![2, 3, 6], {
            let w = w_conv.clone();
            Box::new(move |t, v| {
                let w = t.leaf(w.clone(), false);
                let y = t.conv1d(v, w, 3)?;
                let sq = t.mul(y, y)?;
                t.sum_all(sq)
            })
        }),
        ("conv1d_w", vec![4, 3, 3], {
            let x = b.clone();
            Box::new(move |t, v| {
                let x = t.leaf(x.clone(), false);
                let y = t.conv1d(x, v, 3)?;
                let sq = t.mul(y, y)?;
                t.sum_all(sq)
            })
        }),
        ("depthwise_x", vec![2, 3, 6], {
            let w = w_dw.clone();
            Box::new(move |t, v| {
                let w = t.leaf(w.clone(), false);
                let y = t.depthwise_conv1d(v, w, 5)?;
                let sq = t.mul(y, y)?;
                t.sum_all(sq)
            })
        }),
        ("depthwise_w", vec![3, 5], {
            let x = b.clone();
            Box::new(move |t, v| {
                let x = t.leaf(x.clone(), false);
                let y = t.depthwise_conv1d(x, v, 5)?;
                let sq = t.mul(y, y)?;
                t.sum_all(sq)
            })
        }),
        ("sigmoid", vec![7], Box::new(|t, v| {
            let y = t.sigmoid(v)?;
            t.sum_all(y)
        })),
        ("tanh", vec![7], Box::new(|t, v| {
            let y = t.tanh(v)?;
            let sq = t.mul(y, y)?;
            t.sum_all(sq)
        })),
        ("gelu", vec![7], Box::new(|t, v| {
            let y = t.gelu(v)?;
            t.sum_all(y)
        })),
        ("softmax", vec![2, 4, 3], Box::new(|t, v| {
            let y = t.softmax(v, 1)?;
            let sq = t.mul(y, y)?;
            t.sum_all(sq)
        })),
        ("layer_norm", vec![2, 5, 3], Box::new(|t, v| {
            let y = t.layer_norm(v, 1e-8)?;
            let sq = t.mul(y, y)?;
            let c = t.mul(sq, y)?;
            t.sum_all(c)
        })),
        ("mean_axis", vec![2, 4, 3], Box::new(|t, v| {
            let y = t.mean_axis(v, 2)?;
            let sq = t.mul(y, y)?;
            t.sum_all(sq)
        })),
        ("avg_pool1d", vec![2, 3, 8], Box::new(|t, v| {
            let y = t.avg_pool1d(v, 3)?;
            let sq = t.mul(y, y)?;
            t.sum_all(sq)
        })),
        ("concat", vec![2, 3, 4], Box::new(|t, v| {
            let y = t.concat(&[v, v], 1)?;
            let sq = t.mul(y, y)?;
            t.sum_all(sq)
        })),
        ("slice", vec![2, 6, 4], Box::new(|t, v| {
            let y = t.slice(v, 1, 1, 3)?;
            let sq = t.mul(y, y)?;
            t.sum_all(sq)
        })),
        ("broadcast_to", vec![1, 4, 1], Box::new(|t, v| {
            let y = t.broadcast_to(v, &[2, 4, 5])?;
            let sq = t.mul(y, y)?;
            t.sum_all(sq)
        })),
        ("reshape", vec![2, 6], Box::new(|t, v| {
            let y = t.reshape(v, &[3, 4])?;
            let sq = t.mul(y, y)?;
            t.sum_all(sq)
        })),
        ("permute", vec![2, 3, 4], Box::new(|t, v| {
            let y = t.permute(v, &[2, 0, 1])?;
            let w = t.leaf(
                Tensor::from_f64_slice(&[4, 2, 3], &(0..24).map(|i| i as f64 * 0.1).collect::<Vec<_>>()).unwrap(),
                false,
            );
            let y = t.mul(y, w)?;
            t.sum_all(y)
        })),
        ("mean_all", vec![2, 3], Box::new(|t, v| {
            let sq = t.mul(v, v)?;
            t.mean_all(sq)
        })),
        ("gru_seq_gates", vec![1, 6, 4], {
            let u = u.clone();
            Box::new(move |t, v| {
                let u = t.leaf(u.clone(), false);
                let h = t.gru_seq(v, u)?;
                let sq = t.mul(h, h)?;
                t.sum_all(sq)
            })
        }),
        ("gru_seq_u", vec![2, 6], {
            let g = random_tensor(&[1, 6, 4], &mut rng.clone());
            Box::new(move |t, v| {
                let g = t.leaf(g.clone(), false);
                let h = t.gru_seq(g, v)?;
                let sq = t.mul(h, h)?;
                t.sum_all(sq)
            })
        }),
    ];

    for (name, shape, f) in cases {
        let x = random_tensor(&shape, &mut rng);
        let report = grad_check(&f, &x, 1e-5).unwrap();
        assert!(
            report.max_rel_err <= 1e-4,
            "primitive {name}: rel err {}",
            report.max_rel_err
        );
    }
}

#[test]
fn gru_seq_zero_input_zero_bias_stays_zero() {
    let mut tape = Tape::new();
    let gates = tape.leaf(Tensor::zeros(&[1, 6, 5]), false);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let u = tape.leaf(random_tensor(&[2, 6], &mut rng), false);
    let h = tape.gru_seq(gates, u).unwrap();
    assert!(tape.value(h).data().iter().all(|&v| v == 0.0));
}

#[test]
fn slice_concat_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let xv = random_tensor(&[2, 6, 3], &mut rng);
    let mut tape = Tape::new();
    let x = tape.leaf(xv.clone(), false);
    let a = tape.slice(x, 1, 0, 2).unwrap();
    let b = tape.slice(x, 1, 2, 4).unwrap();
    let back = tape.concat(&[a, b], 1).unwrap();
    assert_eq!(tape.value(back).data(), xv.data());
}

#[test]
fn permute_matches_manual_transpose() {
    let xv = tensor(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let mut tape = Tape::new();
    let x = tape.leaf(xv, false);
    let y = tape.permute(x, &[1, 0]).unwrap();
    assert_eq!(tape.value(y).shape(), &[3, 2]);
    assert_eq!(tape.value(y).data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
}

#[test]
fn broadcast_to_expands_and_reduces() {
    let xv = tensor(&[1, 3, 1], &[1.0, 2.0, 3.0]);
    let mut tape = Tape::new();
    let x = tape.leaf(xv, true);
    let y = tape.broadcast_to(x, &[2, 3, 2]).unwrap();
    let v = tape.value(y).clone();
    for b in 0..2 {
        for c in 0..3 {
            for t in 0..2 {
                assert_eq!(v.data()[(b * 3 + c) * 2 + t], (c + 1) as f64);
            }
        }
    }
    let loss = tape.sum_all(y).unwrap();
    tape.backward(loss).unwrap();
    // Each source element fans out to 4 positions.
    assert_eq!(tape.grad(x).unwrap().data(), &[4.0, 4.0, 4.0]);
}
