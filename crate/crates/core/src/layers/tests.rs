use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{grad_check, Tape, Tensor, Var};

use super::*;

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

#[test]
fn param_set_rejects_duplicate_names() {
    let mut ps = ParamSet::<f64>::new(0);
    ps.register("w", &[2, 2], Init::Zeros).unwrap();
    assert!(ps.register("w", &[2, 2], Init::Zeros).is_err());
}

#[test]
fn param_init_is_seeded_and_deterministic() {
    let build = || {
        let mut ps = ParamSet::<f64>::new(99);
        let a = ps.register("a", &[3, 3], Init::Uniform { fan_in: 3 }).unwrap();
        let b = ps.register("b", &[4], Init::Uniform { fan_in: 4 }).unwrap();
        (ps.get(a).data().to_vec(), ps.get(b).data().to_vec())
    };
    assert_eq!(build(), build());
    let mut ps = ParamSet::<f64>::new(99);
    let a = ps.register("a", &[3, 3], Init::Uniform { fan_in: 3 }).unwrap();
    let bound = 1.0 / 3.0f64.sqrt();
    assert!(ps.get(a).data().iter().all(|v| v.abs() < bound));
}

#[test]
fn inception_shape_contract_and_zero_fixed_point() {
    let mut ps = ParamSet::<f64>::new(1);
    let block = Inception1d::new(&mut ps, "inc", 64, 64).unwrap();
    let mut tape = Tape::new();
    let pv = bind_params(&mut tape, &ps, false);
    let x = tape.leaf(Tensor::zeros(&[2, 64, 6]), false);
    let y = block.forward(&mut tape, &pv, x).unwrap();
    assert_eq!(tape.value(y).shape(), &[2, 64, 6]);
    // Zero input with zero-initialized biases stays zero through every
    // branch, GELU and the residual.
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn inception_rejects_indivisible_width() {
    let mut ps = ParamSet::<f64>::new(1);
    assert!(Inception1d::new(&mut ps, "inc", 4, 6).is_err());
}

#[test]
fn inception_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut ps = ParamSet::<f64>::new(2);
    let block = Inception1d::new(&mut ps, "inc", 4, 4).unwrap();
    let x = random_tensor(&[2, 4, 8], &mut rng);
    let report = grad_check(
        &move |t: &mut Tape<f64>, v: Var| {
            let pv = bind_params(t, &ps, false);
            let y = block.forward(t, &pv, v)?;
            let sq = t.mul(y, y)?;
            t.mean_all(sq)
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(report.max_rel_err <= 1e-4, "rel err {}", report.max_rel_err);
}

/// Scalar reference for one GRU cell, straight from the documented
/// equations, independent of the tape kernels.
#[allow(clippy::needless_range_loop)]
fn gru_cell_reference(
    x: &[f64],
    h: &[f64],
    w_in: &[f64], // (3C, C)
    b_in: &[f64], // 3C
    u: &[f64],    // (C, 3C)
    c: usize,
) -> Vec<f64> {
    let sigmoid = |v: f64| 1.0 / (1.0 + (-v).exp());
    let mut gates = vec![0.0; 3 * c];
    for j in 0..3 * c {
        for i in 0..c {
            gates[j] += w_in[j * c + i] * x[i];
        }
        gates[j] += b_in[j];
    }
    let mut gh = vec![0.0; 3 * c];
    for l in 0..c {
        for j in 0..3 * c {
            gh[j] += h[l] * u[l * 3 * c + j];
        }
    }
    (0..c)
        .map(|i| {
            let z = sigmoid(gates[i] + gh[i]);
            let r = sigmoid(gates[c + i] + gh[c + i]);
            let n = (gates[2 * c + i] + r * gh[2 * c + i]).tanh();
            (1.0 - z) * n + z * h[i]
        })
        .collect()
}

#[test]
fn gru_zero_input_zero_bias_is_zero() {
    let mut ps = ParamSet::<f64>::new(3);
    let gru = GruLayer::new(&mut ps, "gru", 4).unwrap();
    let mut tape = Tape::new();
    let pv = bind_params(&mut tape, &ps, false);
    let x = tape.leaf(Tensor::zeros(&[1, 4, 6]), false);
    let y = gru.forward(&mut tape, &pv, x).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn gru_matches_hand_computed_cell() {
    let c = 2;
    let mut ps = ParamSet::<f64>::new(4);
    let gru = GruLayer::new(&mut ps, "gru", c).unwrap();
    let w_in = vec![0.3, -0.2, 0.5, 0.1, -0.4, 0.6, 0.2, 0.2, -0.1, 0.7, 0.4, -0.3];
    let b_in = vec![0.05, -0.1, 0.2, 0.0, -0.05, 0.15];
    let u = vec![
        0.1, -0.2, 0.3, 0.05, -0.15, 0.25, //
        -0.3, 0.4, -0.1, 0.2, 0.35, -0.05,
    ];
    ps.set_data(gru.input_proj, Tensor::from_f64_slice(&[3 * c, c, 1], &w_in).unwrap())
        .unwrap();
    ps.set_data(gru.input_bias, Tensor::from_f64_slice(&[1, 3 * c, 1], &b_in).unwrap())
        .unwrap();
    ps.set_data(gru.recurrent, Tensor::from_f64_slice(&[c, 3 * c], &u).unwrap())
        .unwrap();

    // Single step on a 1 x 2 x 1 input.
    let x1 = [0.6, -0.9];
    let mut tape = Tape::new();
    let pv = bind_params(&mut tape, &ps, false);
    let x = tape.leaf(Tensor::from_f64_slice(&[1, c, 1], &x1).unwrap(), false);
    let y = gru.forward(&mut tape, &pv, x).unwrap();
    let expected = gru_cell_reference(&x1, &[0.0, 0.0], &w_in, &b_in, &u, c);
    for (a, b) in tape.value(y).data().iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12, "got {a}, expected {b}");
    }

    // Three steps: iterate the same reference cell.
    let steps = [[0.6, -0.9], [-0.2, 0.4], [1.0, 0.3]];
    let flat: Vec<f64> = vec![
        steps[0][0], steps[1][0], steps[2][0], // channel 0 over time
        steps[0][1], steps[1][1], steps[2][1],
    ];
    let mut tape = Tape::new();
    let pv = bind_params(&mut tape, &ps, false);
    let x = tape.leaf(Tensor::from_f64_slice(&[1, c, 3], &flat).unwrap(), false);
    let y = gru.forward(&mut tape, &pv, x).unwrap();
    let mut h = vec![0.0, 0.0];
    for (t, step) in steps.iter().enumerate() {
        h = gru_cell_reference(step, &h, &w_in, &b_in, &u, c);
        for i in 0..c {
            let got = tape.value(y).data()[i * 3 + t];
            assert!((got - h[i]).abs() < 1e-12, "step {t} channel {i}");
        }
    }
}

#[test]
fn gru_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut ps = ParamSet::<f64>::new(5);
    let gru = GruLayer::new(&mut ps, "gru", 3).unwrap();
    let x = random_tensor(&[1, 3, 5], &mut rng);
    let report = grad_check(
        &move |t: &mut Tape<f64>, v: Var| {
            let pv = bind_params(t, &ps, false);
            let y = gru.forward(t, &pv, v)?;
            let sq = t.mul(y, y)?;
            t.mean_all(sq)
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(report.max_rel_err <= 1e-4, "rel err {}", report.max_rel_err);
}

#[test]
fn film_identity_saturation_and_shift() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let u_val = random_tensor(&[1, 3, 4], &mut rng);

    // tau = psi = 0 leaves the features untouched.
    let mut tape = Tape::new();
    let u = tape.leaf(u_val.clone(), false);
    let tau = tape.leaf(Tensor::zeros(&[1, 3, 4]), false);
    let psi = tape.leaf(Tensor::zeros(&[1, 3, 4]), false);
    let e = film_modulate(&mut tape, u, tau, psi).unwrap();
    assert_eq!(tape.value(e).data(), u_val.data());

    // Large tau saturates the multiplier at 2.
    let mut tape = Tape::<f64>::new();
    let u = tape.leaf(Tensor::ones(&[1, 1, 1]), false);
    let tau = tape.leaf(Tensor::full(&[1, 1, 1], 20.0), false);
    let psi = tape.leaf(Tensor::zeros(&[1, 1, 1]), false);
    let e = film_modulate(&mut tape, u, tau, psi).unwrap();
    assert!((tape.value(e).data()[0] - 2.0).abs() <= 1e-9);

    // u=1, tau=0, psi=3 -> 4.
    let mut tape = Tape::<f64>::new();
    let u = tape.leaf(Tensor::ones(&[1, 1, 1]), false);
    let tau = tape.leaf(Tensor::zeros(&[1, 1, 1]), false);
    let psi = tape.leaf(Tensor::full(&[1, 1, 1], 3.0), false);
    let e = film_modulate(&mut tape, u, tau, psi).unwrap();
    assert_eq!(tape.value(e).data()[0], 4.0);
}

#[test]
fn depthwise_pointwise_identity_kernels() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let c = 3;
    let mut ps = ParamSet::<f64>::new(6);
    let layer = DepthwisePointwise::new(&mut ps, "dp", c, 5).unwrap();
    // Delta depthwise kernel and identity pointwise matrix.
    let mut dw = vec![0.0; c * 5];
    for ch in 0..c {
        dw[ch * 5 + 2] = 1.0;
    }
    let mut pw = vec![0.0; c * c];
    for ch in 0..c {
        pw[ch * c + ch] = 1.0;
    }
    ps.set_data(layer.depthwise.weight, Tensor::from_f64_slice(&[c, 5], &dw).unwrap())
        .unwrap();
    ps.set_data(layer.pointwise.weight, Tensor::from_f64_slice(&[c, c, 1], &pw).unwrap())
        .unwrap();
    let x_val = random_tensor(&[2, c, 7], &mut rng);
    let mut tape = Tape::new();
    let pv = bind_params(&mut tape, &ps, false);
    let x = tape.leaf(x_val.clone(), false);
    let y = layer.forward(&mut tape, &pv, x).unwrap();
    assert_eq!(tape.value(y).data(), x_val.data());
}

#[test]
fn depthwise_pointwise_single_channel_is_plain_conv() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut ps = ParamSet::<f64>::new(7);
    let layer = DepthwisePointwise::new(&mut ps, "dp", 1, 3).unwrap();
    ps.set_data(layer.pointwise.weight, Tensor::from_f64_slice(&[1, 1, 1], &[1.0]).unwrap())
        .unwrap();
    let kernel = ps.get(layer.depthwise.weight).data().to_vec();
    let x_val = random_tensor(&[1, 1, 9], &mut rng);

    let mut tape = Tape::new();
    let pv = bind_params(&mut tape, &ps, false);
    let x = tape.leaf(x_val.clone(), false);
    let y = layer.forward(&mut tape, &pv, x).unwrap();

    let mut ref_tape = Tape::new();
    let x = ref_tape.leaf(x_val, false);
    let w = ref_tape.leaf(Tensor::from_f64_slice(&[1, 1, 3], &kernel).unwrap(), false);
    let expected = ref_tape.conv1d(x, w, 3).unwrap();
    for (a, b) in tape.value(y).data().iter().zip(ref_tape.value(expected).data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn depthwise_pointwise_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut ps = ParamSet::<f64>::new(8);
    let layer = DepthwisePointwise::new(&mut ps, "dp", 4, 5).unwrap();
    let x = random_tensor(&[1, 4, 6], &mut rng);
    let report = grad_check(
        &move |t: &mut Tape<f64>, v: Var| {
            let pv = bind_params(t, &ps, false);
            let y = layer.forward(t, &pv, v)?;
            let sq = t.mul(y, y)?;
            t.mean_all(sq)
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(report.max_rel_err <= 1e-4, "rel err {}", report.max_rel_err);
}

#[test]
fn attention_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (bsz, k, c, t_len) = (2, 3, 8, 4);
    let mut ps = ParamSet::<f64>::new(9);
    let attn = BandAttention::new(&mut ps, "attn", c, 2).unwrap();
    let mut tape = Tape::new();
    let pv = bind_params(&mut tape, &ps, false);
    let x = tape.leaf(random_tensor(&[bsz * k, c, t_len], &mut rng), false);
    let probe = attn.attention(&mut tape, &pv, x, bsz, k).unwrap();
    let w = tape.value(probe.weights);
    assert_eq!(w.shape(), &[bsz * 2 * t_len, k, k]);
    for row in w.data().chunks(k) {
        let sum: f64 = row.iter().sum();
        assert!((sum - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn single_token_attention_is_projection_of_v() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let (bsz, k, c, t_len) = (1, 1, 8, 5);
    let mut ps = ParamSet::<f64>::new(10);
    let attn = BandAttention::new(&mut ps, "attn", c, 2).unwrap();
    let x_val = random_tensor(&[bsz * k, c, t_len], &mut rng);

    let mut tape = Tape::new();
    let pv = bind_params(&mut tape, &ps, false);
    let x = tape.leaf(x_val.clone(), false);
    let probe = attn.attention(&mut tape, &pv, x, bsz, k).unwrap();
    assert!(tape.value(probe.weights).data().iter().all(|&w| w == 1.0));

    // With a single token the attention mix is the identity, so the
    // output is Wo applied to V.
    let mut ref_tape = Tape::new();
    let pv = bind_params(&mut ref_tape, &ps, false);
    let x = ref_tape.leaf(x_val, false);
    let normed = attn.norm_attn.forward(&mut ref_tape, &pv, x).unwrap();
    let v = attn.wv.forward(&mut ref_tape, &pv, normed).unwrap();
    let expected = attn.wo.forward(&mut ref_tape, &pv, v).unwrap();
    for (a, b) in tape
        .value(probe.output)
        .data()
        .iter()
        .zip(ref_tape.value(expected).data())
    {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn attention_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let (bsz, k, c, t_len) = (1, 3, 8, 2);
    let mut ps = ParamSet::<f64>::new(11);
    let attn = BandAttention::new(&mut ps, "attn", c, 2).unwrap();
    let x = random_tensor(&[bsz * k, c, t_len], &mut rng);
    let report = grad_check(
        &move |t: &mut Tape<f64>, v: Var| {
            let pv = bind_params(t, &ps, false);
            let y = attn.forward(t, &pv, v, bsz, k)?;
            let sq = t.mul(y, y)?;
            t.mean_all(sq)
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(report.max_rel_err <= 1e-4, "rel err {}", report.max_rel_err);
}

#[test]
fn attention_rejects_bad_head_split() {
    let mut ps = ParamSet::<f64>::new(12);
    assert!(BandAttention::new(&mut ps, "attn", 8, 3).is_err());
}

#[test]
fn layer_grads_cover_all_parameters() {
    // Every registered parameter of a composite receives a gradient.
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut ps = ParamSet::<f64>::new(13);
    let block = Inception1d::new(&mut ps, "inc", 4, 4).unwrap();
    let gru = GruLayer::new(&mut ps, "gru", 4).unwrap();

    let mut tape = Tape::new();
    let pv = bind_params(&mut tape, &ps, true);
    let x = tape.leaf(random_tensor(&[1, 4, 6], &mut rng), false);
    let h = block.forward(&mut tape, &pv, x).unwrap();
    let h = gru.forward(&mut tape, &pv, h).unwrap();
    let sq = tape.mul(h, h).unwrap();
    let loss = tape.mean_all(sq).unwrap();
    tape.backward(loss).unwrap();
    let grads = collect_grads(&tape, &pv);
    for id in ps.ids() {
        assert!(
            grads.get(id).is_some(),
            "parameter '{}' has no gradient",
            ps.name(id)
        );
    }
}
