//! Top-down orthographic raster of the workspace.
//!
//! Channel 0 holds the background with the goal marker, channel 1 the
//! textured obstacles and channel 2 the arm. Pixel `(row, col)` samples the
//! world at its centre; row 0 is the top edge (largest y).

use nalgebra::{DVector, Vector2};

use super::geometry::{point_segment_distance, Obstacle};
use crate::error::{Error, Result};
use crate::kinematics::RobotModel;

pub const BACKGROUND: f32 = 0.2;
pub const CHANNELS: usize = 3;

/// Channel-major (`C × H × W`) image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn get(&self, c: usize, row: usize, col: usize) -> f32 {
        self.data[(c * self.height + row) * self.width + col]
    }

    fn set(&mut self, c: usize, row: usize, col: usize, value: f32) {
        self.data[(c * self.height + row) * self.width + col] = value;
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderOptions {
    pub resolution: usize,
    /// Half-width of the square workspace window.
    pub extent: f64,
    pub draw_arm: bool,
    pub draw_goal: bool,
    pub goal_radius: f64,
}

impl RenderOptions {
    pub fn pixel_size(&self) -> f64 {
        2.0 * self.extent / self.resolution as f64
    }

    pub fn pixel_center(&self, row: usize, col: usize) -> Vector2<f64> {
        let s = self.pixel_size();
        Vector2::new(
            -self.extent + (col as f64 + 0.5) * s,
            self.extent - (row as f64 + 0.5) * s,
        )
    }
}

/// Intensity of an obstacle texture at a pixel; always in `[0.55, 1]`.
pub fn texture_value(texture_id: u8, row: usize, col: usize) -> f32 {
    let on = match texture_id % 4 {
        0 => true,
        1 => (row / 2) % 2 == 0,
        2 => (col / 2) % 2 == 0,
        _ => ((row / 2) + (col / 2)) % 2 == 0,
    };
    if on {
        1.0
    } else {
        0.55
    }
}

pub fn render(
    obstacles: &[Obstacle],
    goal: Option<&DVector<f64>>,
    model: &RobotModel,
    q: &DVector<f64>,
    options: &RenderOptions,
) -> Result<Image> {
    if options.resolution < 16 {
        return Err(Error::InvalidArgument(format!(
            "render resolution must be at least 16, got {}",
            options.resolution
        )));
    }
    let n = options.resolution;
    let mut image = Image::filled(CHANNELS, n, n, 0.0);
    let links = model.joint_positions(q)?;
    let arm_halfwidth: Vec<f64> = model
        .link_radius()
        .iter()
        .map(|r| r.max(0.75 * options.pixel_size()))
        .collect();
    let goal = goal.map(|g| Vector2::new(g[0], g[1]));
    let goal_radius = options.goal_radius.max(0.75 * options.pixel_size());

    for row in 0..n {
        for col in 0..n {
            let p = options.pixel_center(row, col);
            let mut background = BACKGROUND;
            if let (true, Some(g)) = (options.draw_goal, goal) {
                if (p - g).norm() <= goal_radius {
                    background = 1.0;
                }
            }
            image.set(0, row, col, background);
            if let Some(obstacle) = obstacles.iter().find(|o| o.sdf(p) <= 0.0) {
                image.set(1, row, col, texture_value(obstacle.texture_id, row, col));
            }
            if options.draw_arm {
                let on_arm = links
                    .windows(2)
                    .zip(&arm_halfwidth)
                    .any(|(seg, &w)| point_segment_distance(p, seg[0], seg[1]) <= w);
                if on_arm {
                    image.set(2, row, col, 1.0);
                }
            }
        }
    }
    Ok(image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::geometry::Shape;

    fn options(draw: bool) -> RenderOptions {
        RenderOptions {
            resolution: 32,
            extent: 1.3,
            draw_arm: draw,
            draw_goal: draw,
            goal_radius: 0.05,
        }
    }

    #[test]
    fn empty_scene_hidden_arm_is_constant() {
        let model = RobotModel::desk_default();
        let img = render(&[], None, &model, &DVector::zeros(3), &options(false)).unwrap();
        let first = img.get(0, 0, 0);
        for c in 0..CHANNELS {
            for r in 0..32 {
                for k in 0..32 {
                    let expected = if c == 0 { first } else { 0.0 };
                    assert_eq!(img.get(c, r, k), expected);
                }
            }
        }
    }

    #[test]
    fn low_resolution_is_rejected() {
        let model = RobotModel::desk_default();
        let mut opts = options(true);
        opts.resolution = 8;
        assert!(render(&[], None, &model, &DVector::zeros(3), &opts).is_err());
    }

    #[test]
    fn centred_obstacle_footprint() {
        let model = RobotModel::desk_default();
        let opts = options(false);
        let obstacle = Obstacle {
            shape: Shape::Rectangle { half_width: 0.2, half_height: 0.12 },
            center: [0.0, 0.0],
            angle: 0.4,
            texture_id: 3,
        };
        let img = render(std::slice::from_ref(&obstacle), None, &model, &DVector::zeros(3), &opts).unwrap();
        let px = opts.pixel_size();
        for r in 0..32 {
            for k in 0..32 {
                let sdf = obstacle.sdf(opts.pixel_center(r, k));
                let lit = img.get(1, r, k) > 0.0;
                if lit {
                    assert!(sdf <= px, "lit pixel outside dilated footprint");
                }
                if sdf <= -px {
                    assert!(lit, "interior pixel not lit");
                }
            }
        }
    }
}
