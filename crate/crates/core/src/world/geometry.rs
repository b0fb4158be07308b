//! Planar obstacle shapes, signed distances and capsule collision checks.

use nalgebra::{DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::kinematics::RobotModel;

/// Obstacle family; the planar world draws spheres as disks, cuboids as
/// rectangles and cylinders (seen side-on) as capsules.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Sphere,
    Cuboid,
    Cylinder,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Sphere, ShapeKind::Cuboid, ShapeKind::Cylinder];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Cuboid => "cuboid",
            ShapeKind::Cylinder => "cylinder",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    Circle { radius: f64 },
    Rectangle { half_width: f64, half_height: f64 },
    /// Segment of length `2·half_length` along the local x axis, inflated by `radius`.
    Capsule { half_length: f64, radius: f64 },
}

impl Shape {
    pub fn kind(&self) -> ShapeKind {
        match self {
            Shape::Circle { .. } => ShapeKind::Sphere,
            Shape::Rectangle { .. } => ShapeKind::Cuboid,
            Shape::Capsule { .. } => ShapeKind::Cylinder,
        }
    }

    /// Radius of the smallest origin-centred disk containing the shape.
    pub fn bounding_radius(&self) -> f64 {
        match *self {
            Shape::Circle { radius } => radius,
            Shape::Rectangle { half_width, half_height } => half_width.hypot(half_height),
            Shape::Capsule { half_length, radius } => half_length + radius,
        }
    }

    pub fn is_valid(&self) -> bool {
        match *self {
            Shape::Circle { radius } => radius > 0.0,
            Shape::Rectangle { half_width, half_height } => half_width > 0.0 && half_height > 0.0,
            Shape::Capsule { half_length, radius } => half_length > 0.0 && radius > 0.0,
        }
    }

    /// Signed distance in the shape's local frame.
    fn local_sdf(&self, p: Vector2<f64>) -> f64 {
        match *self {
            Shape::Circle { radius } => p.norm() - radius,
            Shape::Rectangle { half_width, half_height } => {
                let qx = p.x.abs() - half_width;
                let qy = p.y.abs() - half_height;
                let outside = Vector2::new(qx.max(0.0), qy.max(0.0)).norm();
                outside + qx.max(qy).min(0.0)
            }
            Shape::Capsule { half_length, radius } => {
                let cx = p.x.clamp(-half_length, half_length);
                (p - Vector2::new(cx, 0.0)).norm() - radius
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub shape: Shape,
    pub center: [f64; 2],
    /// Orientation of the local x axis (rad).
    pub angle: f64,
    pub texture_id: u8,
}

impl Obstacle {
    pub fn center(&self) -> Vector2<f64> {
        Vector2::new(self.center[0], self.center[1])
    }

    fn to_local(&self, p: Vector2<f64>) -> Vector2<f64> {
        let d = p - self.center();
        let (s, c) = self.angle.sin_cos();
        Vector2::new(c * d.x + s * d.y, -s * d.x + c * d.y)
    }

    /// Signed distance from `p` to the obstacle surface (negative inside).
    pub fn sdf(&self, p: Vector2<f64>) -> f64 {
        self.shape.local_sdf(self.to_local(p))
    }

    /// Minimum signed distance over the segment `a–b`.
    ///
    /// Signed distance fields of convex shapes are convex, so a golden-section
    /// search along the segment finds the global minimum.
    pub fn segment_sdf(&self, a: Vector2<f64>, b: Vector2<f64>) -> f64 {
        let at = |t: f64| self.sdf(a + (b - a) * t);
        let ratio = 0.5 * (5f64.sqrt() - 1.0);
        let (mut lo, mut hi) = (0.0, 1.0);
        let mut x1 = hi - ratio * (hi - lo);
        let mut x2 = lo + ratio * (hi - lo);
        let (mut f1, mut f2) = (at(x1), at(x2));
        for _ in 0..64 {
            if f1 <= f2 {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - ratio * (hi - lo);
                f1 = at(x1);
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + ratio * (hi - lo);
                f2 = at(x2);
            }
        }
        f1.min(f2).min(at(0.0)).min(at(1.0))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Collision {
    pub colliding: bool,
    /// Smallest signed clearance between any link capsule and any obstacle;
    /// `+∞` for an empty scene.
    pub min_clearance: f64,
}

/// Capsule-vs-shape clearance of every link against every obstacle.
pub fn check_collision(model: &RobotModel, q: &DVector<f64>, obstacles: &[Obstacle]) -> Result<Collision> {
    let points = model.joint_positions(q)?;
    let mut min_clearance = f64::INFINITY;
    for obstacle in obstacles {
        for (i, link) in points.windows(2).enumerate() {
            let clearance = obstacle.segment_sdf(link[0], link[1]) - model.link_radius()[i];
            min_clearance = min_clearance.min(clearance);
        }
    }
    Ok(Collision {
        colliding: min_clearance < 0.0,
        min_clearance,
    })
}

/// Distance from `p` to the segment `a–b`.
pub fn point_segment_distance(p: Vector2<f64>, a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p - (a + ab * t)).norm()
}
