//! Adam with per-primitive moment rows that follow densify and prune.

use crate::error::{Error, Result};
use crate::geometry::quat_normalize;
use crate::render::PrimitiveGrads;
use crate::scene::{GaussianPrimitive, Scene};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-15;

/// First and second moments for a parameter block of `width` values per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    width: usize,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    pub fn new(width: usize, rows: usize) -> Self {
        Self {
            width,
            m: vec![0.0; width * rows],
            v: vec![0.0; width * rows],
        }
    }

    pub fn from_parts(width: usize, m: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if width == 0 || m.len() != v.len() || m.len() % width != 0 {
            return Err(Error::invalid("moment arrays do not match the row width"));
        }
        Ok(Self { width, m, v })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn rows(&self) -> usize {
        self.m.len() / self.width
    }

    /// One bias-corrected update at step `t` (1-based).
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, t: u64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "optimizer block holds {} values, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        let bc1 = 1.0 - BETA1.powf(t as f64);
        let bc2 = 1.0 - BETA2.powf(t as f64);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
        }
        Ok(())
    }

    pub fn retain_rows(&mut self, keep: &[bool]) {
        let w = self.width;
        let filter = |x: &mut Vec<f64>| {
            let mut out = Vec::with_capacity(x.len());
            for (row, k) in x.chunks(w).zip(keep) {
                if *k {
                    out.extend_from_slice(row);
                }
            }
            *x = out;
        };
        filter(&mut self.m);
        filter(&mut self.v);
    }

    pub fn push_zero_rows(&mut self, count: usize) {
        let n = self.m.len() + count * self.width;
        self.m.resize(n, 0.0);
        self.v.resize(n, 0.0);
    }

    pub fn zero_row(&mut self, row: usize) {
        let r = row * self.width..(row + 1) * self.width;
        self.m[r.clone()].fill(0.0);
        self.v[r].fill(0.0);
    }
}

/// Per-primitive parameter blocks, in checkpoint order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    Mu,
    LogScale,
    Rotation,
    Opacity,
    Signal,
    Mask,
}

impl Group {
    pub const ALL: [Group; 6] = [
        Group::Mu,
        Group::LogScale,
        Group::Rotation,
        Group::Opacity,
        Group::Signal,
        Group::Mask,
    ];

    pub fn width(self) -> usize {
        match self {
            Group::Mu | Group::LogScale => 3,
            Group::Rotation => 4,
            Group::Opacity | Group::Mask => 1,
            Group::Signal => 2,
        }
    }

    pub fn read(self, p: &GaussianPrimitive, out: &mut Vec<f64>) {
        match self {
            Group::Mu => out.extend(p.mu.iter()),
            Group::LogScale => out.extend(p.log_scale.iter()),
            Group::Rotation => out.extend(p.rotation.iter()),
            Group::Opacity => out.push(p.opacity_logit),
            Group::Signal => out.extend([p.signal.re, p.signal.im]),
            Group::Mask => out.push(p.mask_score),
        }
    }

    pub fn write(self, p: &mut GaussianPrimitive, v: &[f64]) {
        match self {
            Group::Mu => p.mu.copy_from_slice(v),
            Group::LogScale => p.log_scale.copy_from_slice(v),
            Group::Rotation => p.rotation.copy_from_slice(v),
            Group::Opacity => p.opacity_logit = v[0],
            Group::Signal => {
                p.signal.re = v[0];
                p.signal.im = v[1];
            }
            Group::Mask => p.mask_score = v[0],
        }
    }

    fn read_grad(self, g: &PrimitiveGrads, out: &mut Vec<f64>) {
        match self {
            Group::Mu => out.extend(g.mu.iter()),
            Group::LogScale => out.extend(g.log_scale.iter()),
            Group::Rotation => out.extend(g.rotation.iter()),
            Group::Opacity => out.push(g.opacity_logit),
            Group::Signal => out.extend([g.signal.re, g.signal.im]),
            Group::Mask => out.push(g.mask_score),
        }
    }
}

/// Rounds to the nearest `f32` so parameters survive the checkpoint's
/// single-precision arrays bit-exactly.
pub fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}

/// Normalizes each rotation and then rounds every parameter to `f32`.
pub fn canonicalize(scene: &mut Scene) {
    for p in &mut scene.primitives {
        p.rotation = quat_normalize(&p.rotation);
        p.mu = p.mu.map(round_f32);
        p.log_scale = p.log_scale.map(round_f32);
        p.rotation = p.rotation.map(round_f32);
        p.opacity_logit = round_f32(p.opacity_logit);
        p.signal.re = round_f32(p.signal.re);
        p.signal.im = round_f32(p.signal.im);
        p.mask_score = round_f32(p.mask_score);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    /// Completed update count.
    pub step: u64,
    /// One entry per [`Group::ALL`].
    pub groups: Vec<Moments>,
    pub theta: Moments,
}

/// Per-group learning rates of one step; `None` freezes the group.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRates {
    pub mu: f64,
    pub log_scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub signal: f64,
    pub mask: Option<f64>,
    pub theta: f64,
}

impl StepRates {
    fn of(&self, g: Group) -> Option<f64> {
        match g {
            Group::Mu => Some(self.mu),
            Group::LogScale => Some(self.log_scale),
            Group::Rotation => Some(self.rotation),
            Group::Opacity => Some(self.opacity),
            Group::Signal => Some(self.signal),
            Group::Mask => self.mask,
        }
    }
}

impl OptimizerState {
    pub fn new(primitives: usize, theta_len: usize) -> Self {
        Self {
            step: 0,
            groups: Group::ALL.iter().map(|g| Moments::new(g.width(), primitives)).collect(),
            theta: Moments::new(1, theta_len),
        }
    }

    pub fn rows(&self) -> usize {
        self.groups[0].rows()
    }

    /// Updates scene and weights in place. Frozen groups keep both their
    /// parameters and their moments. Afterwards rotations are unit length
    /// and every value is `f32`-representable.
    pub fn apply(
        &mut self,
        scene: &mut Scene,
        grads: &[PrimitiveGrads],
        theta: &mut [f64],
        theta_grad: &[f64],
        rates: &StepRates,
    ) -> Result<()> {
        let n = scene.len();
        if grads.len() != n || self.rows() != n {
            return Err(Error::Contract(format!(
                "optimizer tracks {} primitives, scene has {n}, gradients {}",
                self.rows(),
                grads.len()
            )));
        }
        self.step += 1;
        let t = self.step;
        for (gi, group) in Group::ALL.iter().enumerate() {
            let Some(lr) = rates.of(*group) else { continue };
            let w = group.width();
            let mut params = Vec::with_capacity(n * w);
            let mut g = Vec::with_capacity(n * w);
            for (p, d) in scene.primitives.iter().zip(grads) {
                group.read(p, &mut params);
                group.read_grad(d, &mut g);
            }
            self.groups[gi].step(&mut params, &g, lr, t)?;
            for (p, v) in scene.primitives.iter_mut().zip(params.chunks(w)) {
                group.write(p, v);
            }
        }
        self.theta.step(theta, theta_grad, rates.theta, t)?;
        theta.iter_mut().for_each(|v| *v = round_f32(*v));
        canonicalize(scene);
        Ok(())
    }

    pub fn retain_rows(&mut self, keep: &[bool]) {
        self.groups.iter_mut().for_each(|g| g.retain_rows(keep));
    }

    pub fn push_zero_rows(&mut self, count: usize) {
        self.groups.iter_mut().for_each(|g| g.push_zero_rows(count));
    }

    pub fn zero_row(&mut self, row: usize) {
        self.groups.iter_mut().for_each(|g| g.zero_row(row));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{quat_norm, ReceiverFrame, Vec3};
    use proptest::prelude::*;

    fn scene(n: usize) -> Scene {
        let prims = (0..n)
            .map(|i| GaussianPrimitive::isotropic(Vec3::new(i as f64, 1.0, 2.0), 0.25))
            .collect();
        let mut s = Scene::new(prims, ReceiverFrame::default());
        canonicalize(&mut s);
        s
    }

    fn rates(lr: f64) -> StepRates {
        StepRates {
            mu: lr,
            log_scale: lr,
            rotation: lr,
            opacity: lr,
            signal: lr,
            mask: Some(lr),
            theta: lr,
        }
    }

    #[test]
    fn one_step_closed_form() {
        let mut m = Moments::new(1, 1);
        let mut p = [0.0];
        m.step(&mut p, &[1.0], 0.1, 1).unwrap();
        // m_hat = 1, v_hat = 1
        assert!((p[0] + 0.1).abs() < 1e-12);
        // independent recomputation of step 2 with gradient 3
        m.step(&mut p, &[3.0], 0.1, 2).unwrap();
        let m2 = 0.9 * 0.1 + 0.1 * 3.0;
        let v2: f64 = 0.999 * 0.001 + 0.001 * 9.0;
        let expect = -0.1 - 0.1 * (m2 / (1.0 - 0.81)) / (v2 / (1.0 - 0.998001)).sqrt();
        assert!((p[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn zero_gradients_leave_parameters_and_advance_step() {
        let mut s = scene(3);
        let before = s.clone();
        let mut theta = vec![0.5, -0.25];
        let mut opt = OptimizerState::new(3, 2);
        opt.apply(&mut s, &[PrimitiveGrads::default(); 3], &mut theta, &[0.0, 0.0], &rates(0.1))
            .unwrap();
        assert_eq!(s, before);
        assert_eq!(theta, vec![0.5, -0.25]);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn frozen_mask_group_is_untouched() {
        let mut s = scene(2);
        let mut opt = OptimizerState::new(2, 0);
        let g = PrimitiveGrads {
            mask_score: 1.0,
            opacity_logit: 1.0,
            ..Default::default()
        };
        let mut r = rates(0.1);
        r.mask = None;
        opt.apply(&mut s, &[g; 2], &mut [], &[], &r).unwrap();
        assert_eq!(s.primitives[0].mask_score, scene(2).primitives[0].mask_score);
        assert!(s.primitives[0].opacity_logit < scene(2).primitives[0].opacity_logit);
        assert!(opt.groups[5].m.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn compaction_and_extension_track_rows() {
        let mut opt = OptimizerState::new(4, 3);
        for g in &mut opt.groups {
            for (i, v) in g.m.iter_mut().enumerate() {
                *v = i as f64;
            }
        }
        opt.retain_rows(&[true, false, true, false]);
        assert_eq!(opt.rows(), 2);
        assert_eq!(opt.groups[0].m, vec![0.0, 1.0, 2.0, 6.0, 7.0, 8.0]);
        assert_eq!(opt.groups[3].m, vec![0.0, 2.0]);
        opt.push_zero_rows(3);
        assert_eq!(opt.rows(), 5);
        assert!(opt.groups.iter().all(|g| g.m.len() == g.v.len() && g.rows() == 5));
        opt.zero_row(0);
        assert_eq!(opt.groups[0].m[..3], [0.0, 0.0, 0.0]);
        assert_eq!(opt.theta.rows(), 3);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut s = scene(2);
        let mut opt = OptimizerState::new(3, 0);
        assert!(opt
            .apply(&mut s, &[PrimitiveGrads::default(); 2], &mut [], &[], &rates(0.1))
            .is_err());
    }

    proptest! {
        #[test]
        fn rotations_stay_unit_and_values_f32(
            grads in prop::collection::vec(prop::array::uniform4(-10.0f64..10.0), 1..8),
            lr in 1e-4f64..0.5,
        ) {
            let mut s = scene(grads.len());
            let mut opt = OptimizerState::new(grads.len(), 0);
            let g: Vec<PrimitiveGrads> = grads
                .iter()
                .map(|q| PrimitiveGrads { rotation: *q, mu: Vec3::new(q[0], q[1], q[2]), ..Default::default() })
                .collect();
            for _ in 0..3 {
                opt.apply(&mut s, &g, &mut [], &[], &rates(lr)).unwrap();
            }
            for p in &s.primitives {
                let n = quat_norm(&p.rotation);
                prop_assert!((n - 1.0).abs() < 1e-6);
                prop_assert!(p.mu.iter().chain(p.rotation.iter()).all(|v| round_f32(*v) == *v));
            }
        }
    }
}
