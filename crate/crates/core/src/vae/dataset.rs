use std::path::Path;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::kinematics::RobotModel;
use crate::nn::{Checkpoint, Tensor};
use crate::policies::{PolicyConfig, TreeLayout};
use crate::world::{sample_scene, Image, World, WorldConfig};

/// Images stored channel-major (`N × C × H × W`) with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageDataset {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
    pub metadata: Vec<(String, String)>,
}

impl ImageDataset {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: Vec::new(),
            metadata: Vec::new(),
        }
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn len(&self) -> usize {
        if self.image_len() == 0 {
            0
        } else {
            self.data.len() / self.image_len()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn push(&mut self, image: &Image) -> Result<()> {
        if (image.channels, image.height, image.width) != (self.channels, self.height, self.width) {
            return Err(Error::InvalidArgument(format!(
                "image is {}x{}x{}, dataset holds {}x{}x{}",
                image.channels, image.height, image.width, self.channels, self.height, self.width
            )));
        }
        self.data.extend_from_slice(&image.data);
        Ok(())
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.image_len();
        &self.data[i * n..(i + 1) * n]
    }

    /// Gather the given images into a `[B, C, H, W]` tensor.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            data.extend(self.image(i).iter().map(|&v| f64::from(v)));
        }
        Tensor::new(vec![indices.len(), self.channels, self.height, self.width], data)
            .expect("batch shape matches gathered data")
    }

    pub fn mean_image(&self) -> Vec<f64> {
        let n = self.image_len();
        let mut mean = vec![0.0; n];
        for i in 0..self.len() {
            for (m, &v) in mean.iter_mut().zip(self.image(i)) {
                *m += f64::from(v);
            }
        }
        let count = self.len().max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= count);
        mean
    }

    /// Per-pixel MSE of predicting every image by the dataset mean.
    pub fn mean_image_mse(&self) -> f64 {
        let mean = self.mean_image();
        let mut total = 0.0;
        for i in 0..self.len() {
            total += self
                .image(i)
                .iter()
                .zip(&mean)
                .map(|(&v, m)| (f64::from(v) - m).powi(2))
                .sum::<f64>();
        }
        total / (self.len() * self.image_len()).max(1) as f64
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new();
        ck.set_meta("kind", "image_dataset");
        for (k, v) in &self.metadata {
            ck.set_meta(k, v);
        }
        ck.push_array(
            "images",
            vec![self.len(), self.channels, self.height, self.width],
            self.data.clone(),
        )?;
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta("kind") != Some("image_dataset") {
            return Err(Error::Checkpoint("file is not an image dataset".into()));
        }
        let images = ck
            .get("images")
            .ok_or_else(|| Error::Checkpoint("dataset has no images array".into()))?;
        if images.shape.len() != 4 {
            return Err(Error::Checkpoint(format!("images array has shape {:?}", images.shape)));
        }
        Ok(Self {
            channels: images.shape[1],
            height: images.shape[2],
            width: images.shape[3],
            data: images.data.clone(),
            metadata: ck.metadata.iter().filter(|(k, _)| k != "kind").cloned().collect(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CollectConfig {
    pub episodes: usize,
    pub episode_len: usize,
    pub sigma: f64,
}

/// Brownian increment `η ~ N(0, σ²·dt·I)`.
pub fn brownian_increment(rng: &mut impl Rng, dim: usize, sigma: f64, dt: f64) -> DVector<f64> {
    let std = sigma * dt.sqrt();
    if std == 0.0 {
        return DVector::zeros(dim);
    }
    let normal = Normal::new(0.0, std).expect("finite positive standard deviation");
    DVector::from_fn(dim, |_, _| normal.sample(rng))
}

/// Roll out the residual tree with a Brownian-motion action on fresh random
/// scenes and record the rendered image after every step. Episodes always
/// run for `episode_len` steps, collisions included.
pub fn collect_brownian(
    rng: &mut impl Rng,
    model: &RobotModel,
    world: &WorldConfig,
    policy: &PolicyConfig,
    config: &CollectConfig,
) -> Result<ImageDataset> {
    if config.episode_len == 0 {
        return Err(Error::InvalidArgument("episode length must be at least 1".into()));
    }
    let world_config = WorldConfig {
        max_steps: config.episode_len,
        terminate_on_collision: false,
        render: true,
        ..world.clone()
    };
    let mut dataset = ImageDataset::new(crate::world::render::CHANNELS, world.resolution, world.resolution);
    dataset.metadata = vec![
        ("episodes".into(), config.episodes.to_string()),
        ("episode_len".into(), config.episode_len.to_string()),
        ("sigma".into(), config.sigma.to_string()),
        ("n_obstacles".into(), world.scene.n_obstacles.to_string()),
    ];
    let bound = policy.action_bound;
    for _ in 0..config.episodes {
        let scene = sample_scene(rng, model, &world_config.scene)?;
        let mut env = World::new(model.clone(), world_config.clone(), policy.clone(), TreeLayout::Residual, scene)?;
        let mut action = DVector::zeros(model.dof());
        for _ in 0..config.episode_len {
            action += brownian_increment(rng, model.dof(), config.sigma, world_config.dt);
            action.iter_mut().for_each(|a| *a = a.clamp(-bound, bound));
            let step = env.step(&action)?;
            let image = step.state.image.as_ref().expect("collection worlds always render");
            dataset.push(image)?;
        }
    }
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn counts_episodes_times_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = RobotModel::desk_default();
        let config = CollectConfig {
            episodes: 3,
            episode_len: 7,
            sigma: 1.0,
        };
        let ds = collect_brownian(&mut rng, &model, &WorldConfig::default(), &PolicyConfig::default(), &config).unwrap();
        assert_eq!(ds.len(), 21);
        assert!(ds.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn zero_sigma_gives_zero_increments() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(brownian_increment(&mut rng, 3, 0.0, 0.05), DVector::zeros(3));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut ds = ImageDataset::new(3, 16, 16);
        ds.push(&Image::filled(3, 16, 16, 0.25)).unwrap();
        ds.metadata.push(("seed".into(), "4".into()));
        let back = ImageDataset::from_checkpoint(&ds.to_checkpoint().unwrap()).unwrap();
        assert_eq!(back, ds);
        assert!(ds.push(&Image::filled(3, 8, 8, 0.0)).is_err());
    }
}
