use super::layers::{Layer, Mode, Param};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Layers applied in order. Training-mode forward passes cache what the
/// matching backward pass needs.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequential {
    layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        if mode == Mode::Eval {
            return self.infer(x);
        }
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = layer.forward(&h, mode)?;
        }
        Ok(h)
    }

    /// Evaluation-mode forward pass that leaves the network untouched.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.infer(&h)?;
        }
        Ok(h)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let mut g = dy.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    pub fn zero_grad(&mut self) {
        for layer in &mut self.layers {
            for (_, p) in layer.params_mut() {
                p.grad.fill(0.0);
            }
        }
    }

    pub fn clear_cache(&mut self) {
        self.layers.iter_mut().for_each(Layer::clear_cache);
    }

    pub fn params(&self) -> Vec<(String, &Param)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.params().into_iter().map(move |(n, p)| (format!("{i}.{n}"), p)))
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| l.params_mut().into_iter().map(move |(n, p)| (format!("{i}.{n}"), p)))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|(_, p)| p.value.len()).sum()
    }

    /// `θ ← τ·θ_source + (1 − τ)·θ` for every parameter and running statistic.
    pub fn soft_update_from(&mut self, source: &Sequential, tau: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::InvalidArgument(format!("soft update rate {tau} outside [0, 1]")));
        }
        if self.layers.len() != source.layers.len() {
            return Err(Error::InvalidArgument("soft update between different architectures".into()));
        }
        let blend = |dst: &mut [f64], src: &[f64]| {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = tau * s + (1.0 - tau) * *d;
            }
        };
        for (dst, src) in self.layers.iter_mut().zip(&source.layers) {
            if let (Layer::BatchNorm(d), Layer::BatchNorm(s)) = (&mut *dst, src) {
                blend(&mut d.running_mean, &s.running_mean);
                blend(&mut d.running_var, &s.running_var);
            }
            let src_params = src.params();
            let dst_params = dst.params_mut();
            if src_params.len() != dst_params.len() {
                return Err(Error::InvalidArgument("soft update between different architectures".into()));
            }
            for ((_, d), (_, s)) in dst_params.into_iter().zip(src_params) {
                d.value.check_same_shape(&s.value)?;
                blend(d.value.data_mut(), s.value.data());
            }
        }
        Ok(())
    }

    /// Every value needed to reproduce the network's outputs, by name.
    pub fn state(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, p) in layer.params() {
                out.push((format!("{i}.{name}"), p.value.clone()));
            }
            if let Layer::BatchNorm(b) = layer {
                let n = b.features();
                out.push((format!("{i}.running_mean"), Tensor::new(vec![n], b.running_mean.clone()).unwrap()));
                out.push((format!("{i}.running_var"), Tensor::new(vec![n], b.running_var.clone()).unwrap()));
            }
        }
        out
    }

    pub fn load_state(&mut self, state: &[(String, Tensor)]) -> Result<()> {
        let find = |name: &str| -> Result<&Tensor> {
            state
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
        };
        for (i, layer) in self.layers.iter_mut().enumerate() {
            if let Layer::BatchNorm(b) = layer {
                let mean = find(&format!("{i}.running_mean"))?;
                let var = find(&format!("{i}.running_var"))?;
                if mean.len() != b.features() || var.len() != b.features() {
                    return Err(Error::Checkpoint(format!("running statistics of layer {i} have the wrong size")));
                }
                b.running_mean = mean.data().to_vec();
                b.running_var = var.data().to_vec();
            }
            for (name, p) in layer.params_mut() {
                let key = format!("{i}.{name}");
                let t = find(&key)?;
                if t.shape() != p.value.shape() {
                    return Err(Error::Checkpoint(format!(
                        "tensor {key} has shape {:?}, expected {:?}",
                        t.shape(),
                        p.value.shape()
                    )));
                }
                p.value = t.clone();
            }
        }
        Ok(())
    }
}

/// Anything exposing a fixed, ordered list of trainable parameters.
pub trait HasParams {
    fn params_mut(&mut self) -> Vec<(String, &mut Param)>;

    fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.grad.fill(0.0);
        }
    }
}

impl HasParams for Sequential {
    fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        Sequential::params_mut(self)
    }
}

/// Adam with bias correction; one instance per parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: u64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 0,
        }
    }

    /// Apply one update from the accumulated gradients. Non-finite
    /// gradients abort the update and leave the network unchanged.
    pub fn step<M: HasParams + ?Sized>(&mut self, model: &mut M) -> Result<()> {
        let mut params = model.params_mut();
        if let Some((name, _)) = params.iter().find(|(_, p)| !p.grad.all_finite()) {
            return Err(Error::Training(format!("non-finite gradient in {name}")));
        }
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (_, p) in params.iter_mut() {
            let Param { value, grad, m, v } = &mut **p;
            let it = value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
            for ((theta, &g), (mi, vi)) in it {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *theta -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Mean squared error over all elements and its gradient.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    pred.check_same_shape(target)?;
    let n = pred.len().max(1) as f64;
    let diff: Vec<f64> = pred.data().iter().zip(target.data()).map(|(p, t)| p - t).collect();
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    let grad = diff.iter().map(|d| 2.0 * d / n).collect();
    Ok((loss, Tensor::new(pred.shape().to_vec(), grad)?))
}

/// `mean_i w_i (p_i − t_i)²` for an `[N, 1]` prediction, with its gradient
/// and the raw errors `p_i − t_i`.
pub fn weighted_mse(pred: &Tensor, target: &[f64], weights: &[f64]) -> Result<(f64, Tensor, Vec<f64>)> {
    let n = pred.batch();
    if pred.shape() != [n, 1] || target.len() != n || weights.len() != n {
        return Err(Error::InvalidArgument(format!(
            "weighted_mse expects [N, 1] predictions with N targets and weights, got {:?}, {}, {}",
            pred.shape(),
            target.len(),
            weights.len()
        )));
    }
    let errors: Vec<f64> = pred.data().iter().zip(target).map(|(p, t)| p - t).collect();
    let nf = n.max(1) as f64;
    let loss = errors.iter().zip(weights).map(|(e, w)| w * e * e).sum::<f64>() / nf;
    let grad = errors.iter().zip(weights).map(|(e, w)| 2.0 * w * e / nf).collect();
    Ok((loss, Tensor::new(vec![n, 1], grad)?, errors))
}
