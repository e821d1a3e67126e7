//! Small fixed-size helpers shared by the scene model and the rasterizer:
//! quaternions stored as `[w, x, y, z]`, receiver frames and bounding boxes.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Quat = [f64; 4];

pub const IDENTITY_QUAT: Quat = [1.0, 0.0, 0.0, 0.0];

pub fn quat_norm(q: &Quat) -> f64 {
    q.iter().map(|c| c * c).sum::<f64>().sqrt()
}

pub fn quat_normalize(q: &Quat) -> Quat {
    let n = quat_norm(q);
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

/// Rotation matrix of a unit quaternion `[w, x, y, z]`.
pub fn quat_to_matrix(q: &Quat) -> Mat3 {
    let [w, x, y, z] = *q;
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pulls a gradient on the rotation matrix back to the quaternion components.
pub fn quat_to_matrix_backward(q: &Quat, d_r: &Mat3) -> Quat {
    let [w, x, y, z] = *q;
    let g = |r: usize, c: usize| d_r[(r, c)];
    let dw = 2.0
        * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    let dx = 2.0
        * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2)
            + z * g(2, 0)
            + w * g(2, 1)
            - 2.0 * x * g(2, 2));
    let dy = 2.0
        * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2)
            - w * g(2, 0)
            + z * g(2, 1)
            - 2.0 * y * g(2, 2));
    let dz = 2.0
        * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1)
            + y * g(1, 2)
            + x * g(2, 0)
            + y * g(2, 1));
    [dw, dx, dy, dz]
}

/// Quaternion for a rotation of `angle` radians about a unit `axis`.
pub fn quat_from_axis_angle(axis: &Vec3, angle: f64) -> Quat {
    let a = axis.normalize();
    let (s, c) = (0.5 * angle).sin_cos();
    [c, a.x * s, a.y * s, a.z * s]
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s)
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Pose of the receiving array. `orientation` maps array-frame vectors to
/// world-frame vectors; the array lies in its local x-y plane with boresight +z.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "FrameRepr", into = "FrameRepr")]
pub struct ReceiverFrame {
    pub origin: Vec3,
    pub orientation: Mat3,
}

impl Default for ReceiverFrame {
    fn default() -> Self {
        Self {
            origin: Vec3::zeros(),
            orientation: Mat3::identity(),
        }
    }
}

impl ReceiverFrame {
    pub fn new(origin: Vec3, orientation: Mat3) -> Self {
        Self {
            origin,
            orientation,
        }
    }

    /// World point to array-frame coordinates.
    pub fn to_local(&self, p: &Vec3) -> Vec3 {
        self.orientation.transpose() * (p - self.origin)
    }

    /// World direction to array-frame direction.
    pub fn dir_to_local(&self, d: &Vec3) -> Vec3 {
        self.orientation.transpose() * d
    }
}

#[derive(Serialize, Deserialize)]
struct FrameRepr {
    origin: [f64; 3],
    /// Row-major.
    orientation: [[f64; 3]; 3],
}

impl From<FrameRepr> for ReceiverFrame {
    fn from(r: FrameRepr) -> Self {
        let o = r.orientation;
        Self {
            origin: Vec3::from(r.origin),
            orientation: Mat3::new(
                o[0][0], o[0][1], o[0][2], o[1][0], o[1][1], o[1][2], o[2][0], o[2][1], o[2][2],
            ),
        }
    }
}

impl From<ReceiverFrame> for FrameRepr {
    fn from(f: ReceiverFrame) -> Self {
        let m = f.orientation;
        Self {
            origin: [f.origin.x, f.origin.y, f.origin.z],
            orientation: [
                [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
                [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
                [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
            ],
        }
    }
}

/// Axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Self { min, max }
    }

    pub fn volume(&self) -> f64 {
        (0..3).map(|k| self.max[k] - self.min[k]).product()
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    pub fn center(&self) -> Vec3 {
        Vec3::new(
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        )
    }

    pub fn half_extent(&self) -> Vec3 {
        Vec3::new(
            0.5 * (self.max[0] - self.min[0]),
            0.5 * (self.max[1] - self.min[1]),
            0.5 * (self.max[2] - self.min[2]),
        )
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut b = Aabb::new([first.x, first.y, first.z], [first.x, first.y, first.z]);
        for p in it {
            for k in 0..3 {
                b.min[k] = b.min[k].min(p[k]);
                b.max[k] = b.max[k].max(p[k]);
            }
        }
        Some(b)
    }
}
