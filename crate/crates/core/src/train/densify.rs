//! Adaptive density control: clone small and split large primitives whose
//! screen-space center gradient stays high.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::geometry::{quat_to_matrix, Vec3};
use crate::scene::Scene;

/// Running screen-gradient statistics since the last densification.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradStats {
    pub sum: Vec<f64>,
    pub count: Vec<u32>,
}

impl GradStats {
    pub fn new(n: usize) -> Self {
        Self {
            sum: vec![0.0; n],
            count: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.sum.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sum.is_empty()
    }

    /// Accumulates one step; invisible primitives are not counted.
    pub fn record(&mut self, screen: &[f64], visible: &[bool]) {
        for i in 0..self.sum.len() {
            if visible[i] {
                self.sum[i] += screen[i];
                self.count[i] += 1;
            }
        }
    }

    pub fn mean(&self, i: usize) -> f64 {
        if self.count[i] == 0 {
            0.0
        } else {
            self.sum[i] / self.count[i] as f64
        }
    }

    pub fn retain(&mut self, keep: &[bool]) {
        let mut k = keep.iter();
        self.sum.retain(|_| *k.next().unwrap());
        let mut k = keep.iter();
        self.count.retain(|_| *k.next().unwrap());
    }

    pub fn reset(&mut self, n: usize) {
        *self = Self::new(n);
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensifyParams {
    pub threshold: f64,
    pub split_scale: f64,
    pub split_factor: f64,
    pub max_primitives: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DensifyOutcome {
    pub cloned: usize,
    pub split: usize,
    /// Rows whose parameters were replaced in place (split parents).
    pub replaced: Vec<usize>,
}

impl DensifyOutcome {
    pub fn added(&self) -> usize {
        self.cloned + self.split
    }
}

/// Every primitive whose mean gradient reaches the threshold is cloned
/// (largest axis below `split_scale`) or split in two with scales divided
/// by `split_factor`, children sampled from the parent Gaussian. New
/// primitives are appended; a split parent is overwritten by its first
/// child. Candidates are taken in index order until `max_primitives`.
pub fn densify(scene: &mut Scene, stats: &GradStats, params: &DensifyParams, seed: u64) -> DensifyOutcome {
    let mut out = DensifyOutcome::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = scene.len();
    for i in 0..n {
        if scene.len() >= params.max_primitives {
            break;
        }
        if stats.mean(i) < params.threshold || stats.count[i] == 0 {
            continue;
        }
        let parent = scene.primitives[i].clone();
        if parent.max_scale() < params.split_scale {
            scene.primitives.push(parent);
            out.cloned += 1;
            continue;
        }
        let rot = quat_to_matrix(&parent.rotation);
        let scale = parent.log_scale.map(f64::exp);
        let shrink = params.split_factor.ln();
        let mut child = || {
            let z = Vec3::from_fn(|_, _| StandardNormal.sample(&mut rng));
            let mut c = parent.clone();
            c.mu = parent.mu + rot * scale.component_mul(&z);
            c.log_scale = parent.log_scale.map(|l| l - shrink);
            c
        };
        let (a, b) = (child(), child());
        scene.primitives[i] = a;
        scene.primitives.push(b);
        out.split += 1;
        out.replaced.push(i);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ReceiverFrame;
    use crate::scene::GaussianPrimitive;

    const PARAMS: DensifyParams = DensifyParams {
        threshold: 1e-3,
        split_scale: 0.1,
        split_factor: 1.6,
        max_primitives: 100,
    };

    fn scene(radii: &[f64]) -> Scene {
        let prims = radii
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let mut p = GaussianPrimitive::isotropic(Vec3::new(i as f64, 0.0, 1.0), *r);
                p.mask_score = 0.5 + i as f64;
                p
            })
            .collect();
        Scene::new(prims, ReceiverFrame::default())
    }

    fn stats(values: &[f64]) -> GradStats {
        let mut s = GradStats::new(values.len());
        s.record(values, &vec![true; values.len()]);
        s
    }

    #[test]
    fn low_gradients_leave_scene_unchanged() {
        let mut s = scene(&[0.05, 0.5]);
        let before = s.clone();
        let out = densify(&mut s, &stats(&[1e-4, 5e-4]), &PARAMS, 1);
        assert_eq!(out, DensifyOutcome::default());
        assert_eq!(s, before);
    }

    #[test]
    fn small_primitive_is_cloned() {
        let mut s = scene(&[0.05, 0.5]);
        let out = densify(&mut s, &stats(&[2e-3, 0.0]), &PARAMS, 1);
        assert_eq!((out.cloned, out.split), (1, 0));
        assert_eq!(s.len(), 3);
        assert_eq!(s.primitives[2], s.primitives[0]);
    }

    #[test]
    fn large_primitive_is_split() {
        let mut s = scene(&[0.05, 0.5]);
        let parent = s.primitives[1].clone();
        let out = densify(&mut s, &stats(&[0.0, 2e-3]), &PARAMS, 1);
        assert_eq!((out.cloned, out.split), (0, 1));
        assert_eq!(out.replaced, vec![1]);
        assert_eq!(s.len(), 3);
        for c in [&s.primitives[1], &s.primitives[2]] {
            assert!((c.max_scale() - 0.5 / 1.6).abs() < 1e-12);
            assert_eq!(c.mask_score, parent.mask_score);
            assert_eq!(c.signal, parent.signal);
            assert!((c.mu - parent.mu).norm() < 5.0 * 0.5);
        }
        assert_ne!(s.primitives[1].mu, s.primitives[2].mu);
    }

    #[test]
    fn unseen_primitives_are_ignored_and_cap_is_respected() {
        let mut s = scene(&[0.05, 0.05, 0.05]);
        let mut st = GradStats::new(3);
        st.record(&[1.0, 1.0, 1.0], &[true, false, true]);
        assert_eq!(st.mean(1), 0.0);
        let capped = DensifyParams {
            max_primitives: 4,
            ..PARAMS
        };
        let out = densify(&mut s, &st, &capped, 1);
        assert_eq!(out.cloned, 1);
        assert_eq!(s.len(), 4);
    }

    #[test]
    fn stats_follow_pruning() {
        let mut st = stats(&[1.0, 2.0, 3.0]);
        st.retain(&[true, false, true]);
        assert_eq!(st.sum, vec![1.0, 3.0]);
        assert_eq!(st.count, vec![1, 1]);
    }
}
