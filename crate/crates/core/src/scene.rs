//! Gaussian-primitive representation of the radiance field.
//!
//! Every primitive is one virtual transmitter: a 3D Gaussian footprint with
//! an opacity and a complex signal, plus a learnable mask score used for
//! pruning.

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{
    logit, quat_normalize, quat_to_matrix, sigmoid, Aabb, Mat3, Quat, ReceiverFrame, Vec3,
    IDENTITY_QUAT,
};
use crate::spatial::nearest_neighbor_distances;

pub const INITIAL_OPACITY: f64 = 0.1;
pub const INITIAL_SIGNAL: f64 = 0.01;
/// Floor on the nearest-neighbor distance used for initial scales (meters).
pub const MIN_INIT_DISTANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPrimitive {
    pub mu: Vec3,
    pub log_scale: Vec3,
    /// Unit quaternion `[w, x, y, z]`.
    pub rotation: Quat,
    pub opacity_logit: f64,
    pub signal: Complex64,
    pub mask_score: f64,
}

impl GaussianPrimitive {
    /// Isotropic primitive of radius `d` at `mu` with the default initial
    /// opacity, signal and an undecided mask.
    pub fn isotropic(mu: Vec3, d: f64) -> Self {
        let ls = d.max(MIN_INIT_DISTANCE).ln();
        Self {
            mu,
            log_scale: Vec3::new(ls, ls, ls),
            rotation: IDENTITY_QUAT,
            opacity_logit: logit(INITIAL_OPACITY),
            signal: Complex64::new(INITIAL_SIGNAL, 0.0),
            mask_score: 0.0,
        }
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn importance(&self) -> f64 {
        sigmoid(self.mask_score)
    }

    pub fn covariance(&self) -> Mat3 {
        covariance_from(&self.log_scale, &self.rotation)
    }

    pub fn max_scale(&self) -> f64 {
        self.log_scale.max().exp()
    }
}

/// `R S S^T R^T` with `S = diag(exp(log_scale))`.
pub fn covariance_from(log_scale: &Vec3, rotation: &Quat) -> Mat3 {
    let r = quat_to_matrix(rotation);
    let s2 = Mat3::from_diagonal(&log_scale.map(|l| (2.0 * l).exp()));
    r * s2 * r.transpose()
}

/// Unnormalized density `exp(-0.5 (x-mu)^T Sigma^-1 (x-mu))`.
pub fn gaussian_eval(primitive: &GaussianPrimitive, x: &Vec3) -> f64 {
    // Sigma^-1 = R S^-2 R^T
    let r = quat_to_matrix(&primitive.rotation);
    let local = r.transpose() * (x - primitive.mu);
    let inv_s2 = primitive.log_scale.map(|l| (-2.0 * l).exp());
    let q: f64 = (0..3).map(|k| local[k] * local[k] * inv_s2[k]).sum();
    (-0.5 * q).exp()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub primitives: Vec<GaussianPrimitive>,
    pub receiver: ReceiverFrame,
}

impl Scene {
    pub fn new(primitives: Vec<GaussianPrimitive>, receiver: ReceiverFrame) -> Self {
        Self {
            primitives,
            receiver,
        }
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn centers(&self) -> Vec<Vec3> {
        self.primitives.iter().map(|p| p.mu).collect()
    }

    /// Keeps the primitives whose flag is set, preserving order.
    pub fn retain_by(&mut self, keep: &[bool]) {
        debug_assert_eq!(keep.len(), self.primitives.len());
        let mut it = keep.iter();
        self.primitives.retain(|_| *it.next().unwrap());
    }

    pub fn renormalize_rotations(&mut self) {
        for p in &mut self.primitives {
            p.rotation = quat_normalize(&p.rotation);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid(format!(
                "a point cloud needs at least 2 points, got {}",
                points.len()
            )));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Parses `x y z` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut points = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let coords: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::format(path, format!("line {}: {e}", lineno + 1)))?;
            if coords.len() != 3 || coords.iter().any(|c| !c.is_finite()) {
                return Err(Error::format(
                    path,
                    format!("line {}: expected three finite coordinates", lineno + 1),
                ));
            }
            points.push(Vec3::new(coords[0], coords[1], coords[2]));
        }
        Self::new(points).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# x y z (meters)\n");
        for p in &self.points {
            out.push_str(&format!("{} {} {}\n", p.x, p.y, p.z));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// One primitive per cloud point, isotropic with radius equal to the
/// distance to the nearest other point.
pub fn init_from_point_cloud(cloud: &PointCloud, receiver: ReceiverFrame) -> Scene {
    let d = nearest_neighbor_distances(cloud.points());
    let primitives = cloud
        .points()
        .iter()
        .zip(d)
        .map(|(p, d)| GaussianPrimitive::isotropic(*p, d))
        .collect();
    Scene::new(primitives, receiver)
}

/// `n` centers drawn uniformly from `bounds`, scaled like
/// [`init_from_point_cloud`].
pub fn init_random(n: usize, bounds: &Aabb, seed: u64, receiver: ReceiverFrame) -> Result<Scene> {
    if n < 2 {
        return Err(Error::invalid(format!("random init needs n >= 2, got {n}")));
    }
    if !(bounds.volume() > 0.0) {
        return Err(Error::invalid("random init box must have positive volume"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Vec3> = (0..n)
        .map(|_| {
            Vec3::new(
                rng.gen_range(bounds.min[0]..=bounds.max[0]),
                rng.gen_range(bounds.min[1]..=bounds.max[1]),
                rng.gen_range(bounds.min[2]..=bounds.max[2]),
            )
        })
        .collect();
    let cloud = PointCloud::new(points)?;
    Ok(init_from_point_cloud(&cloud, receiver))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::quat_from_axis_angle;
    use proptest::prelude::*;
    use rand::Rng;
    use std::f64::consts::{FRAC_PI_2, LN_2};

    fn assert_mat_close(a: &Mat3, b: &Mat3, tol: f64) {
        assert!((a - b).abs().max() < tol, "{a} vs {b}");
    }

    #[test]
    fn covariance_examples() {
        assert_mat_close(&covariance_from(&Vec3::zeros(), &IDENTITY_QUAT), &Mat3::identity(), 1e-15);
        let ls = Vec3::new(LN_2, 0.0, 0.0);
        assert_mat_close(
            &covariance_from(&ls, &IDENTITY_QUAT),
            &Mat3::from_diagonal(&Vec3::new(4.0, 1.0, 1.0)),
            1e-12,
        );
        let rz = quat_from_axis_angle(&Vec3::z(), FRAC_PI_2);
        assert_mat_close(
            &covariance_from(&ls, &rz),
            &Mat3::from_diagonal(&Vec3::new(1.0, 4.0, 1.0)),
            1e-12,
        );
    }

    #[test]
    fn gaussian_eval_examples() {
        let mut p = GaussianPrimitive::isotropic(Vec3::new(0.5, -1.0, 2.0), 1.0);
        assert_eq!(gaussian_eval(&p, &p.mu), 1.0);
        let x = p.mu + Vec3::new(0.0, 0.6, 0.8);
        assert!((gaussian_eval(&p, &x) - (-0.5f64).exp()).abs() < 1e-12);
        p.log_scale = Vec3::new(LN_2, 0.0, 0.0);
        let x = p.mu + Vec3::new(2.0, 0.0, 0.0);
        assert!((gaussian_eval(&p, &x) - (-0.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn point_cloud_init_uses_nearest_neighbor_scale() {
        let cloud = PointCloud::new(vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(3.0, 0.0, 0.0),
        ])
        .unwrap();
        let scene = init_from_point_cloud(&cloud, ReceiverFrame::default());
        let d: Vec<f64> = scene.primitives.iter().map(|p| p.log_scale.x.exp()).collect();
        for (got, want) in d.iter().zip([1.0, 1.0, 2.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        for p in &scene.primitives {
            assert_eq!(p.log_scale.x, p.log_scale.y);
            assert_eq!(p.rotation, IDENTITY_QUAT);
            assert!((p.opacity() - 0.1).abs() < 1e-12);
            assert_eq!(p.signal, Complex64::new(0.01, 0.0));
            assert_eq!(p.importance(), 0.5);
        }
    }

    #[test]
    fn duplicate_points_clamp_to_floor() {
        let cloud = PointCloud::new(vec![Vec3::new(1.0, 2.0, 3.0); 2]).unwrap();
        let scene = init_from_point_cloud(&cloud, ReceiverFrame::default());
        for p in &scene.primitives {
            assert!((p.log_scale.x.exp() - 1e-4).abs() < 1e-16);
        }
    }

    #[test]
    fn large_cloud_keeps_cardinality() {
        let n = 190_000;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Vec3> = (0..n)
            .map(|_| Vec3::new(rng.gen::<f64>() * 10.0, rng.gen::<f64>() * 8.0, rng.gen::<f64>() * 3.0))
            .collect();
        let scene = init_from_point_cloud(&PointCloud::new(pts).unwrap(), ReceiverFrame::default());
        assert_eq!(scene.len(), n);
    }

    #[test]
    fn random_init_is_seeded_and_bounded() {
        let b = Aabb::new([0.0; 3], [1.0; 3]);
        let a = init_random(100, &b, 5, ReceiverFrame::default()).unwrap();
        let c = init_random(100, &b, 5, ReceiverFrame::default()).unwrap();
        assert_eq!(a, c);
        assert!(a.primitives.iter().all(|p| b.contains(&p.mu)));
        assert!(init_random(1, &b, 5, ReceiverFrame::default()).is_err());
        let flat = Aabb::new([0.0; 3], [1.0, 1.0, 0.0]);
        assert!(init_random(10, &flat, 5, ReceiverFrame::default()).is_err());
    }

    #[test]
    fn cloud_text_round_trip_and_comments() {
        let text = "# header\n0 0 0\n\n1.5 -2 3e-1\n";
        let pc = PointCloud::parse(text, Path::new("c.txt")).unwrap();
        assert_eq!(pc.len(), 2);
        let again = PointCloud::parse(&pc.to_text(), Path::new("c.txt")).unwrap();
        assert_eq!(pc, again);
        assert!(PointCloud::parse("1 2\n3 4 5\n", Path::new("c.txt")).is_err());
        assert!(PointCloud::parse("1 2 3\n", Path::new("c.txt")).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn covariance_is_positive_definite(
            ls in prop::array::uniform3(-4.0f64..2.0),
            q in prop::array::uniform4(-1.0f64..1.0),
        ) {
            prop_assume!(q.iter().map(|c| c * c).sum::<f64>() > 1e-3);
            let q = quat_normalize(&q);
            let cov = covariance_from(&Vec3::from(ls), &q);
            prop_assert!((cov - cov.transpose()).abs().max() < 1e-9 * cov.abs().max());
            let eig = cov.symmetric_eigenvalues();
            prop_assert!(eig.iter().all(|e| *e > 0.0), "{:?}", eig);
        }

        #[test]
        fn gaussian_peaks_at_center(
            ls in prop::array::uniform3(-2.0f64..1.0),
            q in prop::array::uniform4(-1.0f64..1.0),
            offset in prop::array::uniform3(-3.0f64..3.0),
        ) {
            prop_assume!(q.iter().map(|c| c * c).sum::<f64>() > 1e-3);
            let mut p = GaussianPrimitive::isotropic(Vec3::new(0.3, 0.1, -0.2), 1.0);
            p.log_scale = Vec3::from(ls);
            p.rotation = quat_normalize(&q);
            let at_center = gaussian_eval(&p, &p.mu);
            prop_assert_eq!(at_center, 1.0);
            prop_assert!(gaussian_eval(&p, &(p.mu + Vec3::from(offset))) <= at_center);
        }
    }
}
