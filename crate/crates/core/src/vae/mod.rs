//! β-VAE over rendered workspace images: Brownian-motion data collection,
//! training with a warmed-up KL weight, encoding to the posterior mean and
//! latent traversals.

pub mod dataset;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use dataset::{brownian_increment, collect_brownian, CollectConfig, ImageDataset};

use crate::error::{Error, Result};
use crate::nn::{Adam, Checkpoint, HasParams, Layer, Mode, Param, Sequential, Tensor};
use crate::world::Image;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VaeConfig {
    pub latent_dim: usize,
    pub beta_max: f64,
    /// Fraction of all optimisation steps over which β ramps up from 0.
    pub warmup_fraction: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    /// Weight of the summed squared reconstruction error, `1/(2σ²)` for a
    /// Gaussian pixel likelihood with noise `σ`; 50 corresponds to σ = 0.1.
    pub recon_weight: f64,
    pub collect_episodes: usize,
    pub collect_episode_len: usize,
    pub brownian_sigma: f64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            latent_dim: 8,
            beta_max: 4.0,
            warmup_fraction: 0.25,
            batch_size: 128,
            lr: 1e-3,
            epochs: 3,
            recon_weight: 50.0,
            collect_episodes: 300,
            collect_episode_len: 100,
            brownian_sigma: 1.0,
        }
    }
}

impl VaeConfig {
    pub fn collect_config(&self) -> CollectConfig {
        CollectConfig {
            episodes: self.collect_episodes,
            episode_len: self.collect_episode_len,
            sigma: self.brownian_sigma,
        }
    }
}

/// `β_max · min(1, step / warmup_steps)`; a zero warm-up means full β at once.
pub fn beta_schedule(step: usize, warmup_steps: usize, beta_max: f64) -> f64 {
    if warmup_steps == 0 {
        return beta_max;
    }
    beta_max * (step as f64 / warmup_steps as f64).min(1.0)
}

/// `½ Σ (μ² + σ² − 1 − log σ²)` for a single diagonal Gaussian.
pub fn kl_to_standard_normal(mu: &[f64], log_sigma: &[f64]) -> f64 {
    mu.iter()
        .zip(log_sigma)
        .map(|(m, ls)| 0.5 * (m * m + (2.0 * ls).exp() - 1.0 - 2.0 * ls))
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VaeLoss {
    pub loss: f64,
    pub recon: f64,
    pub kl: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub beta: f64,
    pub loss: VaeLoss,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VaeModel {
    pub latent_dim: usize,
    pub resolution: usize,
    pub recon_weight: f64,
    encoder: Sequential,
    mu_head: Sequential,
    log_sigma_head: Sequential,
    decoder: Sequential,
}

/// Encoder channel widths for a given input resolution.
pub fn channel_plan(resolution: usize) -> Vec<usize> {
    if resolution >= 128 {
        vec![6, 32, 64, 128, 256]
    } else {
        vec![16, 32, 64]
    }
}

impl VaeModel {
    pub fn new(resolution: usize, latent_dim: usize, recon_weight: f64, rng: &mut impl Rng) -> Result<Self> {
        let channels = channel_plan(resolution);
        let depth = channels.len();
        if latent_dim == 0 || resolution % (1 << depth) != 0 || resolution >> depth == 0 {
            return Err(Error::InvalidArgument(format!(
                "cannot build a VAE for resolution {resolution} with latent dimension {latent_dim}"
            )));
        }
        let side = resolution >> depth;
        let last = channels[depth - 1];
        let flat = last * side * side;

        let mut enc = Vec::new();
        let mut prev = 3;
        for &c in &channels {
            enc.push(Layer::conv(prev, c, 3, 2, 1, rng));
            enc.push(Layer::relu());
            enc.push(Layer::batch_norm(c));
            prev = c;
        }
        enc.push(Layer::reshape(&[flat]));

        let mu_head = vec![Layer::dense(flat, latent_dim, rng), Layer::batch_norm(latent_dim), Layer::tanh()];
        let log_sigma_head = vec![Layer::dense(flat, latent_dim, rng), Layer::batch_norm(latent_dim)];

        let mut dec = vec![
            Layer::dense(latent_dim, flat, rng),
            Layer::relu(),
            Layer::reshape(&[last, side, side]),
        ];
        let mut prev = last;
        for &c in channels.iter().rev().skip(1) {
            dec.push(Layer::Upsample2x);
            dec.push(Layer::conv(prev, c, 3, 1, 1, rng));
            dec.push(Layer::relu());
            dec.push(Layer::batch_norm(c));
            prev = c;
        }
        dec.push(Layer::Upsample2x);
        dec.push(Layer::conv(prev, 3, 3, 1, 1, rng));
        dec.push(Layer::sigmoid());

        Ok(Self {
            latent_dim,
            resolution,
            recon_weight,
            encoder: Sequential::new(enc),
            mu_head: Sequential::new(mu_head),
            log_sigma_head: Sequential::new(log_sigma_head),
            decoder: Sequential::new(dec),
        })
    }

    fn check_batch(&self, x: &Tensor) -> Result<()> {
        let r = self.resolution;
        if x.shape().len() != 4 || x.shape()[1..] != [3, r, r] {
            return Err(Error::InvalidArgument(format!(
                "VAE expects [N, 3, {r}, {r}] images, got {:?}",
                x.shape()
            )));
        }
        Ok(())
    }

    /// Training-mode objective with explicit reparameterisation noise `eps`
    /// (`[N, k]`). With `backward` set, parameter gradients are accumulated.
    pub fn loss_with_noise(&mut self, x: &Tensor, eps: &Tensor, beta: f64, backward: bool) -> Result<VaeLoss> {
        self.check_batch(x)?;
        let n = x.batch();
        if n < 2 {
            return Err(Error::InvalidArgument("VAE loss needs a batch of at least 2".into()));
        }
        if eps.shape() != [n, self.latent_dim] {
            return Err(Error::InvalidArgument(format!("noise has shape {:?}", eps.shape())));
        }
        let h = self.encoder.forward(x, Mode::Train)?;
        let mu = self.mu_head.forward(&h, Mode::Train)?;
        let log_sigma = self.log_sigma_head.forward(&h, Mode::Train)?;
        let sigma = log_sigma.map(f64::exp);
        let z_data = mu
            .data()
            .iter()
            .zip(sigma.data())
            .zip(eps.data())
            .map(|((m, s), e)| m + s * e)
            .collect();
        let z = Tensor::new(vec![n, self.latent_dim], z_data)?;
        let out = self.decoder.forward(&z, Mode::Train)?;

        let nf = n as f64;
        let sq: f64 = out.data().iter().zip(x.data()).map(|(o, t)| (o - t).powi(2)).sum();
        let recon = self.recon_weight * sq / nf;
        let kl = kl_to_standard_normal(mu.data(), log_sigma.data()) / nf;
        let loss = recon + beta * kl;
        if !loss.is_finite() {
            self.clear_cache();
            return Err(Error::Training(format!(
                "non-finite VAE loss (recon {recon}, kl {kl}, beta {beta}, max |mu| {}, max log sigma {})",
                mu.data().iter().fold(0.0f64, |a, v| a.max(v.abs())),
                log_sigma.data().iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v)),
            )));
        }
        if !backward {
            self.clear_cache();
            return Ok(VaeLoss { loss, recon, kl });
        }

        let d_out: Vec<f64> = out
            .data()
            .iter()
            .zip(x.data())
            .map(|(o, t)| 2.0 * self.recon_weight * (o - t) / nf)
            .collect();
        let dz = self.decoder.backward(&Tensor::new(out.shape().to_vec(), d_out)?)?;
        let mut d_mu = dz.clone();
        let mut d_ls = dz;
        for i in 0..d_mu.len() {
            let (m, s, e) = (mu.data()[i], sigma.data()[i], eps.data()[i]);
            d_mu.data_mut()[i] += beta * m / nf;
            d_ls.data_mut()[i] = d_ls.data()[i] * e * s + beta * (s * s - 1.0) / nf;
        }
        let mut dh = self.mu_head.backward(&d_mu)?;
        dh.add_assign(&self.log_sigma_head.backward(&d_ls)?)?;
        self.encoder.backward(&dh)?;
        Ok(VaeLoss { loss, recon, kl })
    }

    pub fn sample_noise(&self, n: usize, rng: &mut impl Rng) -> Tensor {
        Tensor::from_fn(&[n, self.latent_dim], |_| rng.sample(StandardNormal))
    }

    /// Objective on a batch with freshly sampled reparameterisation noise.
    pub fn loss(&mut self, x: &Tensor, beta: f64, rng: &mut impl Rng) -> Result<VaeLoss> {
        let eps = self.sample_noise(x.batch(), rng);
        self.loss_with_noise(x, &eps, beta, false)
    }

    pub fn clear_cache(&mut self) {
        self.encoder.clear_cache();
        self.mu_head.clear_cache();
        self.log_sigma_head.clear_cache();
        self.decoder.clear_cache();
    }

    /// Posterior means `[N, k]` in evaluation mode.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        self.check_batch(x)?;
        self.mu_head.infer(&self.encoder.infer(x)?)
    }

    pub fn encode_image(&self, image: &Image) -> Result<Vec<f64>> {
        let x = Tensor::new(
            vec![1, image.channels, image.height, image.width],
            image.data.iter().map(|&v| f64::from(v)).collect(),
        )?;
        Ok(self.encode(&x)?.into_data())
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        if z.shape().len() != 2 || z.shape()[1] != self.latent_dim {
            return Err(Error::Dimension {
                context: "latent batch",
                expected: self.latent_dim,
                got: z.shape().get(1).copied().unwrap_or(0),
            });
        }
        self.decoder.infer(z)
    }

    /// Decode of the posterior mean.
    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        self.decode(&self.encode(x)?)
    }

    /// Per-pixel reconstruction MSE over a dataset, in evaluation mode.
    pub fn reconstruction_mse(&self, dataset: &ImageDataset) -> Result<f64> {
        let mut total = 0.0;
        let indices: Vec<usize> = (0..dataset.len()).collect();
        for chunk in indices.chunks(256) {
            let x = dataset.batch(chunk);
            let y = self.reconstruct(&x)?;
            total += y.data().iter().zip(x.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        Ok(total / (dataset.len() * dataset.image_len()).max(1) as f64)
    }

    /// Tile decodes of a `grid × grid` sweep of latent dimensions `i`
    /// (columns) and `j` (rows) over `range`, all other dimensions at zero.
    /// A single-tile grid decodes the midpoint of the range.
    pub fn decode_traversal(&self, i: usize, j: usize, grid: usize, range: (f64, f64)) -> Result<Image> {
        if i >= self.latent_dim || j >= self.latent_dim || grid == 0 {
            return Err(Error::InvalidArgument(format!(
                "traversal over dims ({i}, {j}) with grid {grid} in a {}-dim latent",
                self.latent_dim
            )));
        }
        let values: Vec<f64> = if grid == 1 {
            vec![0.5 * (range.0 + range.1)]
        } else {
            (0..grid)
                .map(|t| range.0 + (range.1 - range.0) * t as f64 / (grid - 1) as f64)
                .collect()
        };
        let k = self.latent_dim;
        let mut z = Tensor::zeros(&[grid * grid, k]);
        for r in 0..grid {
            for c in 0..grid {
                let row = r * grid + c;
                z.data_mut()[row * k + i] = values[c];
                z.data_mut()[row * k + j] = values[r];
            }
        }
        let decoded = self.decode(&z)?;
        let res = self.resolution;
        let mut image = Image::filled(3, grid * res, grid * res, 0.0);
        for r in 0..grid {
            for c in 0..grid {
                let tile = decoded.row(r * grid + c);
                for ch in 0..3 {
                    for y in 0..res {
                        for x in 0..res {
                            let dst = (ch * grid * res + r * res + y) * grid * res + c * res + x;
                            image.data[dst] = tile[(ch * res + y) * res + x] as f32;
                        }
                    }
                }
            }
        }
        Ok(image)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new();
        ck.set_meta("kind", "vae");
        ck.set_meta("latent_dim", self.latent_dim);
        ck.set_meta("resolution", self.resolution);
        ck.set_meta("recon_weight", self.recon_weight);
        ck.push_network("encoder", &self.encoder)?;
        ck.push_network("mu", &self.mu_head)?;
        ck.push_network("log_sigma", &self.log_sigma_head)?;
        ck.push_network("decoder", &self.decoder)?;
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint, rng: &mut impl Rng) -> Result<Self> {
        if ck.meta("kind") != Some("vae") {
            return Err(Error::Checkpoint("file is not a VAE checkpoint".into()));
        }
        let parse = |key: &str| -> Result<f64> {
            ck.meta(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Checkpoint(format!("missing or invalid {key}")))
        };
        let mut model = Self::new(
            parse("resolution")? as usize,
            parse("latent_dim")? as usize,
            parse("recon_weight")?,
            rng,
        )?;
        ck.load_network("encoder", &mut model.encoder)?;
        ck.load_network("mu", &mut model.mu_head)?;
        ck.load_network("log_sigma", &mut model.log_sigma_head)?;
        ck.load_network("decoder", &mut model.decoder)?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>, rng: &mut impl Rng) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, rng)
    }
}

impl HasParams for VaeModel {
    fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = Vec::new();
        for (prefix, net) in [
            ("encoder", &mut self.encoder),
            ("mu", &mut self.mu_head),
            ("log_sigma", &mut self.log_sigma_head),
            ("decoder", &mut self.decoder),
        ] {
            out.extend(net.params_mut().into_iter().map(|(n, p)| (format!("{prefix}.{n}"), p)));
        }
        out
    }
}

/// Shuffled minibatch Adam training; returns the per-step loss curve.
pub fn train_vae(model: &mut VaeModel, dataset: &ImageDataset, config: &VaeConfig, rng: &mut impl Rng) -> Result<Vec<LossRecord>> {
    if dataset.len() < 2 {
        return Err(Error::InvalidArgument("VAE training needs at least 2 images".into()));
    }
    if dataset.height != model.resolution || dataset.width != model.resolution || dataset.channels != 3 {
        return Err(Error::InvalidArgument(format!(
            "dataset images are {}x{}x{}, model expects 3x{r}x{r}",
            dataset.channels,
            dataset.height,
            dataset.width,
            r = model.resolution
        )));
    }
    let batch = config.batch_size.clamp(2, dataset.len());
    let per_epoch = dataset.len().div_ceil(batch);
    let total = per_epoch * config.epochs;
    let warmup = (config.warmup_fraction * total as f64).ceil() as usize;
    let mut adam = Adam::new(config.lr);
    let mut curve = Vec::with_capacity(total);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut step = 0;
    for epoch in 0..config.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch) {
            if chunk.len() < 2 {
                continue;
            }
            let beta = beta_schedule(step, warmup, config.beta_max);
            let x = dataset.batch(chunk);
            let eps = model.sample_noise(chunk.len(), rng);
            model.zero_grad();
            let loss = model.loss_with_noise(&x, &eps, beta, true)?;
            adam.step(model)?;
            curve.push(LossRecord { step, beta, loss });
            step += 1;
        }
        if let Some(last) = curve.last() {
            log::info!(
                "vae epoch {}/{}: loss {:.4} recon {:.4} kl {:.4} beta {:.3}",
                epoch + 1,
                config.epochs,
                last.loss.loss,
                last.loss.recon,
                last.loss.kl,
                last.beta
            );
        }
    }
    Ok(curve)
}

/// Finite-difference check of the full objective's parameter gradients on
/// a small model with fixed reparameterisation noise.
pub fn gradcheck(seed: u64, beta: f64) -> Result<crate::nn::gradcheck::GradcheckReport> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut model = VaeModel::new(16, 3, 1.0, &mut rng)?;
    crate::nn::gradcheck::jitter(&mut model, 0.05, &mut rng);
    let x = Tensor::from_fn(&[3, 3, 16, 16], |_| rng.random_range(0.0..1.0));
    let eps = model.sample_noise(3, &mut rng);
    crate::nn::gradcheck::check_parameters(
        &format!("vae_loss(beta={beta})"),
        &mut model,
        |m, backward| m.loss_with_noise(&x, &eps, beta, backward).map(|l| l.loss),
        12,
        &mut rng,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn beta_schedule_ramps_linearly() {
        assert_eq!(beta_schedule(0, 100, 4.0), 0.0);
        assert_eq!(beta_schedule(50, 100, 4.0), 2.0);
        assert_eq!(beta_schedule(100, 100, 4.0), 4.0);
        assert_eq!(beta_schedule(1000, 100, 4.0), 4.0);
    }

    #[test]
    fn kl_closed_form_examples() {
        assert_eq!(kl_to_standard_normal(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert_eq!(kl_to_standard_normal(&[1.0], &[0.0]), 0.5);
    }

    #[test]
    fn shapes_and_latent_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = VaeModel::new(32, 8, 1.0, &mut rng).unwrap();
        let x = Tensor::from_fn(&[2, 3, 32, 32], |i| (i % 7) as f64 / 7.0);
        let z = model.encode(&x).unwrap();
        assert_eq!(z.shape(), &[2, 8]);
        assert!(z.data().iter().all(|v| v.abs() < 1.0));
        assert_eq!(model.decode(&z).unwrap().shape(), &[2, 3, 32, 32]);
        assert!(VaeModel::new(20, 8, 1.0, &mut rng).is_err());
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        for beta in [0.0, 1.0, 3.5] {
            let report = gradcheck(5, beta).unwrap();
            assert!(report.passed(), "{}: {:e}", report.name, report.max_rel_error);
        }
    }

    #[test]
    fn traversal_tiles() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = VaeModel::new(16, 4, 1.0, &mut rng).unwrap();
        let grid = model.decode_traversal(0, 1, 4, (-1.0, 1.0)).unwrap();
        assert_eq!((grid.height, grid.width), (64, 64));
        let single = model.decode_traversal(0, 1, 1, (-1.0, 1.0)).unwrap();
        let zero = model.decode(&Tensor::zeros(&[1, 4])).unwrap();
        for (a, b) in single.data.iter().zip(zero.data()) {
            assert_eq!(*a, *b as f32);
        }
        assert!(model.decode_traversal(4, 0, 2, (-1.0, 1.0)).is_err());
    }
}
