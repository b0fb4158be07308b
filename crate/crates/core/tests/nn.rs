mod common;

use common::rng;
use proptest::prelude::*;
use rand::Rng;
use rmpr::nn::{mse, weighted_mse, Adam, Checkpoint, Layer, Mode, Param, Sequential, Tensor};

fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn dense_parts(layer: &Layer) -> (&Param, &Param) {
    match layer {
        Layer::Dense(d) => (&d.weight, &d.bias),
        _ => panic!("not a dense layer"),
    }
}

#[test]
fn dense_forward_matches_loops() {
    let mut rng = rng(10);
    let layer = Layer::dense(5, 4, &mut rng);
    let x = random_tensor(&mut rng, &[3, 5]);
    let (w, b) = dense_parts(&layer);
    let mut want = Vec::new();
    for n in 0..3 {
        for o in 0..4 {
            let mut s = b.value.data()[o];
            for i in 0..5 {
                s += w.value.data()[o * 5 + i] * x.data()[n * 5 + i];
            }
            want.push(s);
        }
    }
    let got = layer.infer(&x).unwrap();
    assert_eq!(got.shape(), &[3, 4]);
    assert!(max_abs_diff(got.data(), &want) < 1e-12);
}

fn naive_conv(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> (Vec<usize>, Vec<f64>) {
    let (n, ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, k) = (w.shape()[0], w.shape()[2]);
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * co * ho * wo];
    for b_ in 0..n {
        for o in 0..co {
            for r in 0..ho {
                for c in 0..wo {
                    let mut s = b.data()[o];
                    for i in 0..ci {
                        for kr in 0..k {
                            for kc in 0..k {
                                let y = (r * stride + kr) as isize - pad as isize;
                                let xx = (c * stride + kc) as isize - pad as isize;
                                if y < 0 || xx < 0 || y >= h as isize || xx >= wd as isize {
                                    continue;
                                }
                                let xi = ((b_ * ci + i) * h + y as usize) * wd + xx as usize;
                                let wi = ((o * ci + i) * k + kr) * k + kc;
                                s += x.data()[xi] * w.data()[wi];
                            }
                        }
                    }
                    out[((b_ * co + o) * ho + r) * wo + c] = s;
                }
            }
        }
    }
    (vec![n, co, ho, wo], out)
}

#[test]
fn conv_forward_matches_loops() {
    let mut rng = rng(11);
    for (stride, pad, size) in [(1, 1, 6), (2, 1, 8), (2, 0, 7), (1, 0, 5)] {
        let mut layer = Layer::conv(2, 3, 3, stride, pad, &mut rng);
        if let Layer::Conv2d(c) = &mut layer {
            c.bias.value = random_tensor(&mut rng, &[3]);
        }
        let x = random_tensor(&mut rng, &[2, 2, size, size]);
        let Layer::Conv2d(c) = &layer else { unreachable!() };
        let (shape, want) = naive_conv(&x, &c.weight.value, &c.bias.value, stride, pad);
        let got = layer.infer(&x).unwrap();
        assert_eq!(got.shape(), shape.as_slice());
        assert!(max_abs_diff(got.data(), &want) < 1e-12);
    }
}

#[test]
fn batch_norm_training_forward_matches_definition() {
    let mut rng = rng(12);
    let mut layer = Layer::batch_norm(3);
    if let Layer::BatchNorm(bn) = &mut layer {
        bn.gamma.value = Tensor::new(vec![3], vec![1.5, -0.5, 2.0]).unwrap();
        bn.beta.value = Tensor::new(vec![3], vec![0.1, 0.2, -0.3]).unwrap();
    }
    let x = random_tensor(&mut rng, &[4, 3, 2, 2]);
    let y = layer.forward(&x, Mode::Train).unwrap();
    let (gamma, beta) = ([1.5, -0.5, 2.0], [0.1, 0.2, -0.3]);
    for ch in 0..3 {
        let vals: Vec<f64> = (0..4)
            .flat_map(|b| (0..4).map(move |s| (b, s)))
            .map(|(b, s)| x.data()[(b * 3 + ch) * 4 + s])
            .collect();
        let mean = vals.iter().sum::<f64>() / 16.0;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
        for b in 0..4 {
            for s in 0..4 {
                let i = (b * 3 + ch) * 4 + s;
                let want = gamma[ch] * (x.data()[i] - mean) / (var + 1e-5).sqrt() + beta[ch];
                assert!((y.data()[i] - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn constant_batch_normalises_to_beta() {
    let mut layer = Layer::batch_norm(2);
    if let Layer::BatchNorm(bn) = &mut layer {
        bn.gamma.value = Tensor::new(vec![2], vec![3.0, 4.0]).unwrap();
        bn.beta.value = Tensor::new(vec![2], vec![0.25, -0.75]).unwrap();
    }
    let x = Tensor::new(vec![4, 2], vec![7.0, -2.0, 7.0, -2.0, 7.0, -2.0, 7.0, -2.0]).unwrap();
    let y = layer.forward(&x, Mode::Train).unwrap();
    for row in 0..4 {
        assert_eq!(y.row(row), &[0.25, -0.75]);
    }
}

#[test]
fn batch_norm_running_statistics() {
    let mut layer = Layer::batch_norm(1);
    let x = Tensor::new(vec![4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    layer.forward(&x, Mode::Train).unwrap();
    let Layer::BatchNorm(bn) = &layer else { unreachable!() };
    // Mean 2.5, unbiased variance 5/3, momentum 0.9 from (0, 1).
    assert!((bn.running_mean[0] - 0.25).abs() < 1e-15);
    assert!((bn.running_var[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-15);
    let y = layer.infer(&Tensor::new(vec![1, 1], vec![0.25]).unwrap()).unwrap();
    assert!(y.data()[0].abs() < 1e-15);
}

#[test]
fn activations_and_shape_layers() {
    let x = Tensor::new(vec![1, 4], vec![-2.0, -0.5, 0.0, 3.0]).unwrap();
    assert_eq!(Layer::relu().infer(&x).unwrap().data(), &[0.0, 0.0, 0.0, 3.0]);
    let t = Layer::tanh().infer(&x).unwrap();
    assert!(max_abs_diff(t.data(), &x.data().iter().map(|v| v.tanh()).collect::<Vec<_>>()) < 1e-15);
    let s = Layer::sigmoid().infer(&x).unwrap();
    let want: Vec<f64> = x.data().iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
    assert!(max_abs_diff(s.data(), &want) < 1e-15);

    let img = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let up = Layer::Upsample2x.infer(&img).unwrap();
    assert_eq!(up.shape(), &[1, 1, 4, 4]);
    assert_eq!(
        up.data(),
        &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0]
    );
    let flat = Layer::reshape(&[4]).infer(&img).unwrap();
    assert_eq!(flat.shape(), &[1, 4]);
}

#[test]
fn least_squares_gradient_has_closed_form() {
    // L = mean((XWᵀ + b − Y)²) over N·F entries, so ∂L/∂W = 2/(NF)·Rᵀ X.
    let mut rng = rng(13);
    let (n, fi, fo) = (6, 4, 3);
    let mut net = Sequential::new(vec![Layer::dense(fi, fo, &mut rng)]);
    let x = random_tensor(&mut rng, &[n, fi]);
    let y = random_tensor(&mut rng, &[n, fo]);
    let pred = net.forward(&x, Mode::Train).unwrap();
    let (loss, grad) = mse(&pred, &y).unwrap();
    net.zero_grad();
    net.backward(&grad).unwrap();

    let r: Vec<f64> = pred.data().iter().zip(y.data()).map(|(p, t)| p - t).collect();
    let want_loss = r.iter().map(|v| v * v).sum::<f64>() / (n * fo) as f64;
    assert!((loss - want_loss).abs() < 1e-14);
    let scale = 2.0 / (n * fo) as f64;
    let mut dw = vec![0.0; fo * fi];
    let mut db = vec![0.0; fo];
    for s in 0..n {
        for o in 0..fo {
            db[o] += scale * r[s * fo + o];
            for i in 0..fi {
                dw[o * fi + i] += scale * r[s * fo + o] * x.data()[s * fi + i];
            }
        }
    }
    let (w, b) = dense_parts(&net.layers()[0]);
    assert!(max_abs_diff(w.grad.data(), &dw) < 1e-12);
    assert!(max_abs_diff(b.grad.data(), &db) < 1e-12);
}

#[test]
fn weighted_mse_gradient() {
    let pred = Tensor::new(vec![3, 1], vec![1.0, 2.0, 0.5]).unwrap();
    let (loss, grad, err) = weighted_mse(&pred, &[0.0, 1.0, 1.5], &[1.0, 0.5, 2.0]).unwrap();
    assert!((loss - (1.0 + 0.5 + 2.0) / 3.0).abs() < 1e-15);
    assert_eq!(err, vec![1.0, 1.0, -1.0]);
    let want = [2.0 / 3.0, 1.0 / 3.0, -4.0 / 3.0];
    assert!(max_abs_diff(grad.data(), &want) < 1e-15);
}

#[test]
fn two_adam_steps_follow_the_update_rule() {
    let mut rng = rng(14);
    let mut net = Sequential::new(vec![Layer::dense(1, 1, &mut rng)]);
    let theta0 = dense_parts(&net.layers()[0]).0.value.data()[0];
    let mut adam = Adam::new(0.1);
    let grads = [0.5, -0.2];
    for g in grads {
        net.zero_grad();
        for (_, p) in net.params_mut() {
            p.grad.data_mut()[0] = g;
        }
        adam.step(&mut net).unwrap();
    }
    let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 0.1);
    let (mut m, mut v, mut theta) = (0.0, 0.0, theta0);
    for (t, g) in grads.iter().enumerate() {
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let m_hat = m / (1.0 - b1.powi(t as i32 + 1));
        let v_hat = v / (1.0 - b2.powi(t as i32 + 1));
        theta -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    let got = dense_parts(&net.layers()[0]).0.value.data()[0];
    assert!((got - theta).abs() < 1e-15, "{got} vs {theta}");
    assert_eq!(adam.steps, 2);
}

#[test]
fn adam_refuses_non_finite_gradients() {
    let mut rng = rng(15);
    let mut net = Sequential::new(vec![Layer::dense(2, 1, &mut rng)]);
    let before = net.clone();
    for (_, p) in net.params_mut() {
        p.grad.data_mut()[0] = f64::NAN;
    }
    assert!(Adam::new(0.1).step(&mut net).is_err());
    assert_eq!(net.params()[0].1.value, before.params()[0].1.value);
}

#[test]
fn checkpoints_round_trip_and_reject_corruption() {
    let mut rng = rng(16);
    let net = Sequential::new(vec![
        Layer::conv(3, 4, 3, 2, 1, &mut rng),
        Layer::relu(),
        Layer::batch_norm(4),
        Layer::reshape(&[16]),
        Layer::dense(16, 2, &mut rng),
    ]);
    let mut ck = Checkpoint::new();
    ck.set_meta("kind", "test");
    ck.push_network("net", &net).unwrap();
    let bytes = ck.to_bytes();
    assert_eq!(&bytes[..8], b"RMPRCKPT");
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    let mut restored = Sequential::new(vec![
        Layer::conv(3, 4, 3, 2, 1, &mut rng),
        Layer::relu(),
        Layer::batch_norm(4),
        Layer::reshape(&[16]),
        Layer::dense(16, 2, &mut rng),
    ]);
    back.load_network("net", &mut restored).unwrap();
    assert_eq!(back.meta("kind"), Some("test"));
    let x = random_tensor(&mut rng, &[2, 3, 4, 4]);
    // Weights are stored in single precision.
    let (a, b) = (net.infer(&x).unwrap(), restored.infer(&x).unwrap());
    assert!(max_abs_diff(a.data(), b.data()) < 1e-5);

    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(Checkpoint::from_bytes(&bad).is_err());
}

proptest! {
    #[test]
    fn dense_backward_input_gradient_is_weight_transpose(seed in 0u64..1000) {
        let mut rng = rng(seed);
        let mut layer = Layer::dense(3, 2, &mut rng);
        let x = random_tensor(&mut rng, &[1, 3]);
        layer.forward(&x, Mode::Train).unwrap();
        let dy = random_tensor(&mut rng, &[1, 2]);
        let dx = layer.backward(&dy).unwrap();
        let (w, _) = dense_parts(&layer);
        for i in 0..3 {
            let want = (0..2).map(|o| w.value.data()[o * 3 + i] * dy.data()[o]).sum::<f64>();
            prop_assert!((dx.data()[i] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn soft_update_is_a_convex_blend(tau in 0.0f64..=1.0, seed in 0u64..100) {
        let mut rng = rng(seed);
        let source = Sequential::new(vec![Layer::dense(2, 2, &mut rng)]);
        let mut target = Sequential::new(vec![Layer::dense(2, 2, &mut rng)]);
        let before = target.clone();
        target.soft_update_from(&source, tau).unwrap();
        for ((_, t), ((_, s), (_, b))) in target.params().into_iter().zip(source.params().into_iter().zip(before.params())) {
            for ((tv, sv), bv) in t.value.data().iter().zip(s.value.data()).zip(b.value.data()) {
                prop_assert!((tv - (tau * sv + (1.0 - tau) * bv)).abs() < 1e-15);
            }
        }
    }
}
