//! Central finite-difference checks of hand-written backward passes.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{Layer, Mode};
use super::network::{HasParams, Sequential};
use super::tensor::Tensor;
use crate::error::Result;

pub const FD_STEP: f64 = 1e-5;
/// Gradient magnitude, per unit of loss magnitude, below which errors are
/// measured absolutely: central differences carry roundoff of order
/// `ε_mach·|L| / h` regardless of the true gradient.
pub const ERROR_FLOOR: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;
/// Largest fraction of probed entries that may be set aside as non-smooth.
pub const MAX_SKIPPED_FRACTION: f64 = 0.05;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    scaled_error(analytic, numeric, 1.0)
}

fn scaled_error(analytic: f64, numeric: f64, loss: f64) -> f64 {
    let floor = ERROR_FLOOR * loss.abs().max(1.0);
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Add uniform noise in `±scale` to every parameter, moving biases off the
/// exact activation kinks they start on.
pub fn jitter<M: HasParams>(model: &mut M, scale: f64, rng: &mut impl Rng) {
    for (_, p) in model.params_mut() {
        for v in p.value.data_mut() {
            *v += rng.random_range(-scale..scale);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub name: String,
    pub checked: usize,
    /// Entries where an activation kink lies inside every probe window, so
    /// no difference quotient is trustworthy. Counted but not compared.
    pub skipped: usize,
    pub max_rel_error: f64,
}

impl GradcheckReport {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            checked: 0,
            skipped: 0,
            max_rel_error: 0.0,
        }
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error <= TOLERANCE && self.skipped as f64 <= MAX_SKIPPED_FRACTION * self.checked as f64
    }

    fn merge(&mut self, other: GradcheckReport) {
        self.checked += other.checked;
        self.skipped += other.skipped;
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
    }

    fn record(&mut self, analytic: f64, numeric: Option<Numeric>, loss: f64) {
        self.checked += 1;
        match numeric {
            Some(n) => {
                let err = scaled_error(analytic, n.value, loss * n.floor_scale);
                self.max_rel_error = self.max_rel_error.max(err);
            }
            None => self.skipped += 1,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Numeric {
    value: f64,
    /// Roundoff grows as `1/h`, so the absolute floor grows with it.
    floor_scale: f64,
}

/// Central difference at the first step in `FD_STEP, FD_STEP/10` where the
/// loss is smooth across the probe window; `None` when neither is. Smooth
/// means the central quotients at `h` and `2h` agree and the second
/// differences scale linearly (`D(2h) ≈ 2·D(h)`), which fails whenever an
/// activation kink sits inside the window. `eval(δ)` evaluates the loss
/// with the probed entry offset by `δ`.
fn probe(mut eval: impl FnMut(f64) -> Result<f64>, loss: f64) -> Result<Option<Numeric>> {
    let f0 = eval(0.0)?;
    for floor_scale in [1.0, 10.0] {
        let h = FD_STEP / floor_scale;
        let (p1, m1, p2, m2) = (eval(h)?, eval(-h)?, eval(2.0 * h)?, eval(-2.0 * h)?);
        let central = (p1 - m1) / (2.0 * h);
        let central2 = (p2 - m2) / (4.0 * h);
        let second = (p1 - 2.0 * f0 + m1) / h;
        let second2 = (p2 - 2.0 * f0 + m2) / (2.0 * h);
        let floor = ERROR_FLOOR * (loss * floor_scale).abs().max(1.0);
        let scale = central.abs().max(floor);
        if (central - central2).abs() <= TOLERANCE * scale && (second2 - 2.0 * second).abs() <= TOLERANCE * scale {
            return Ok(Some(Numeric {
                value: central,
                floor_scale,
            }));
        }
    }
    Ok(None)
}

fn pick(rng: &mut impl Rng, len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        sample(rng, len, max).into_vec()
    }
}

/// Compare the gradients accumulated by `eval(model, true)` against central
/// differences of `eval(model, false)`, for up to `per_tensor` entries of
/// each parameter tensor. The model is restored afterwards.
pub fn check_parameters<M, F>(
    name: &str,
    model: &mut M,
    mut eval: F,
    per_tensor: usize,
    rng: &mut impl Rng,
) -> Result<GradcheckReport>
where
    M: HasParams + Clone,
    F: FnMut(&mut M, bool) -> Result<f64>,
{
    let original = model.clone();
    model.zero_grad();
    let loss = eval(model, true)?;
    let analytic: Vec<Tensor> = model.params_mut().into_iter().map(|(_, p)| p.grad.clone()).collect();
    let mut report = GradcheckReport::new(name);
    for (ti, grad) in analytic.iter().enumerate() {
        for j in pick(rng, grad.len(), per_tensor) {
            let base = model.params_mut()[ti].1.value.data()[j];
            let p = probe(
                |delta| {
                    model.params_mut()[ti].1.value.data_mut()[j] = base + delta;
                    let l = eval(model, false);
                    model.params_mut()[ti].1.value.data_mut()[j] = base;
                    l
                },
                loss,
            )?;
            report.record(grad.data()[j], p, loss);
        }
    }
    *model = original;
    Ok(report)
}

/// Check parameter and input gradients of `net` under the loss `Σ c ⊙ net(x)`
/// with a random fixed `c`.
pub fn check_sequential(name: &str, net: &mut Sequential, x: &Tensor, per_tensor: usize, rng: &mut impl Rng) -> Result<GradcheckReport> {
    let out_shape = net.infer(x)?.shape().to_vec();
    let c = Tensor::from_fn(&out_shape, |_| rng.random_range(-1.0..1.0));
    let loss = |net: &mut Sequential, x: &Tensor| -> Result<f64> {
        let y = net.forward(x, Mode::Train)?;
        Ok(y.data().iter().zip(c.data()).map(|(a, b)| a * b).sum())
    };
    let mut report = check_parameters(
        name,
        net,
        |n, backward| {
            let l = loss(n, x)?;
            if backward {
                n.backward(&c)?;
            } else {
                n.clear_cache();
            }
            Ok(l)
        },
        per_tensor,
        rng,
    )?;

    let original = net.clone();
    let l0 = loss(net, x)?;
    let dx = net.backward(&c)?;
    let mut input = GradcheckReport::new(name);
    let mut shifted = x.clone();
    for j in pick(rng, x.len(), per_tensor) {
        let p = probe(
            |delta| {
                shifted.data_mut()[j] = x.data()[j] + delta;
                let l = loss(net, &shifted);
                shifted.data_mut()[j] = x.data()[j];
                l
            },
            l0,
        )?;
        input.record(dx.data()[j], p, l0);
    }
    *net = original;
    report.merge(input);
    Ok(report)
}

/// One check per layer type on small random inputs.
pub fn layer_suite(seed: u64) -> Result<Vec<GradcheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();
    let mut run = |name: &str, layers: Vec<Layer>, shape: &[usize], rng: &mut ChaCha8Rng| -> Result<()> {
        let mut net = Sequential::new(layers);
        jitter(&mut net, 0.05, rng);
        let x = Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0));
        reports.push(check_sequential(name, &mut net, &x, 40, rng)?);
        Ok(())
    };
    let dense = Layer::dense(5, 4, &mut rng);
    run("dense", vec![dense], &[3, 5], &mut rng)?;
    let conv = Layer::conv(2, 3, 3, 2, 1, &mut rng);
    run("conv2d", vec![conv], &[2, 2, 6, 6], &mut rng)?;
    run("batch_norm_features", vec![Layer::batch_norm(4)], &[5, 4], &mut rng)?;
    run("batch_norm_spatial", vec![Layer::batch_norm(3)], &[2, 3, 3, 3], &mut rng)?;
    run("relu", vec![Layer::relu()], &[4, 6], &mut rng)?;
    run("tanh", vec![Layer::tanh()], &[4, 6], &mut rng)?;
    run("sigmoid", vec![Layer::sigmoid()], &[4, 6], &mut rng)?;
    run("upsample", vec![Layer::Upsample2x], &[2, 2, 3, 3], &mut rng)?;
    run("reshape", vec![Layer::reshape(&[2, 2, 2])], &[3, 8], &mut rng)?;
    let stack = vec![
        Layer::conv(3, 4, 3, 2, 1, &mut rng),
        Layer::relu(),
        Layer::batch_norm(4),
        Layer::reshape(&[16]),
        Layer::dense(16, 6, &mut rng),
        Layer::batch_norm(6),
        Layer::tanh(),
        Layer::dense(6, 16, &mut rng),
        Layer::reshape(&[4, 2, 2]),
        Layer::Upsample2x,
        Layer::conv(4, 3, 3, 1, 1, &mut rng),
        Layer::sigmoid(),
    ];
    run("stacked", stack, &[3, 3, 4, 4], &mut rng)?;
    Ok(reports)
}
