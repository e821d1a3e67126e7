//! Rendering losses and evaluation metrics.
//!
//! SSIM uses an 11x11 Gaussian window (sigma 1.5) evaluated at every pixel
//! with symmetric (edge-including reflection) padding, optionally cyclic
//! along azimuth, and assumes inputs on a unit dynamic range.

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::mask::mask_regularizer;
use crate::spatial::{nearest_brute, KdTree};
use crate::spectrum::{Grid, SpectrumImage};

pub const SSIM_RADIUS: usize = 5;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 1e-4;
pub const SSIM_C2: f64 = 9e-4;
/// Weight of the D-SSIM term in the rendering loss.
pub const DEFAULT_SSIM_WEIGHT: f64 = 0.2;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub l1: f64,
    pub d_ssim: f64,
    pub render_loss: f64,
    pub mask_reg: f64,
    pub total: f64,
}

fn check_grids(a: &SpectrumImage, b: &SpectrumImage) -> Result<()> {
    a.check_same_grid(b)
}

/// Mean absolute difference and its (sub)gradient w.r.t. `a`.
pub fn l1_loss(a: &SpectrumImage, b: &SpectrumImage) -> Result<(f64, Vec<f64>)> {
    check_grids(a, b)?;
    let n = a.values().len() as f64;
    let mut sum = 0.0;
    let grad = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| {
            let d = x - y;
            sum += d.abs();
            if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect();
    Ok((sum / n, grad))
}

fn gaussian_taps() -> [f64; 2 * SSIM_RADIUS + 1] {
    let mut w = [0.0; 2 * SSIM_RADIUS + 1];
    for (k, t) in w.iter_mut().enumerate() {
        let x = k as f64 - SSIM_RADIUS as f64;
        *t = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|t| *t /= s);
    w
}

/// Source index for a possibly out-of-range position.
fn pad_index(i: i64, n: usize, cyclic: bool) -> usize {
    let n = n as i64;
    if cyclic {
        return i.rem_euclid(n) as usize;
    }
    let m = i.rem_euclid(2 * n);
    (if m >= n { 2 * n - 1 - m } else { m }) as usize
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SsimOptions {
    /// Treat the azimuth axis as periodic instead of reflecting at 0/360.
    pub cyclic_azimuth: bool,
}

/// Separable windowed filter over an azimuth-major image.
struct Filter {
    grid: Grid,
    taps: [f64; 2 * SSIM_RADIUS + 1],
    cyclic_azimuth: bool,
}

impl Filter {
    fn new(grid: Grid, opts: SsimOptions) -> Self {
        Self {
            grid,
            taps: gaussian_taps(),
            cyclic_azimuth: opts.cyclic_azimuth,
        }
    }

    /// Forward (`transpose = false`) or adjoint application.
    fn apply(&self, x: &[f64], transpose: bool) -> Vec<f64> {
        let (na, ne) = (self.grid.n_az, self.grid.n_el);
        let r = SSIM_RADIUS as i64;
        let mut tmp = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        // elevation axis
        for a in 0..na {
            for b in 0..ne {
                for (k, w) in self.taps.iter().enumerate() {
                    let src = pad_index(b as i64 + k as i64 - r, ne, false);
                    if transpose {
                        tmp[a * ne + src] += w * x[a * ne + b];
                    } else {
                        tmp[a * ne + b] += w * x[a * ne + src];
                    }
                }
            }
        }
        // azimuth axis
        for a in 0..na {
            for (k, w) in self.taps.iter().enumerate() {
                let src = pad_index(a as i64 + k as i64 - r, na, self.cyclic_azimuth);
                for b in 0..ne {
                    if transpose {
                        out[src * ne + b] += w * tmp[a * ne + b];
                    } else {
                        out[a * ne + b] += w * tmp[src * ne + b];
                    }
                }
            }
        }
        out
    }
}

/// Mean SSIM of `a` against `b` and its gradient w.r.t. `a`.
pub fn ssim(a: &SpectrumImage, b: &SpectrumImage, opts: SsimOptions) -> Result<(f64, Vec<f64>)> {
    check_grids(a, b)?;
    let f = Filter::new(a.grid(), opts);
    let (x, y) = (a.values(), b.values());
    let n = x.len();
    let sq = |v: &[f64], w: &[f64]| v.iter().zip(w).map(|(p, q)| p * q).collect::<Vec<f64>>();
    let mx = f.apply(x, false);
    let my = f.apply(y, false);
    let mxx = f.apply(&sq(x, x), false);
    let myy = f.apply(&sq(y, y), false);
    let mxy = f.apply(&sq(x, y), false);
    let mut total = 0.0;
    let (mut g_mu, mut g_m2, mut g_xy) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let inv_n = 1.0 / n as f64;
    for q in 0..n {
        let (ux, uy) = (mx[q], my[q]);
        let a1 = 2.0 * ux * uy + SSIM_C1;
        let a2 = 2.0 * (mxy[q] - ux * uy) + SSIM_C2;
        let b1 = ux * ux + uy * uy + SSIM_C1;
        let b2 = (mxx[q] - ux * ux) + (myy[q] - uy * uy) + SSIM_C2;
        let s = a1 * a2 / (b1 * b2);
        total += s;
        g_mu[q] = inv_n * s * (2.0 * uy / a1 - 2.0 * uy / a2 - 2.0 * ux / b1 + 2.0 * ux / b2);
        g_m2[q] = -inv_n * s / b2;
        g_xy[q] = inv_n * s * 2.0 / a2;
    }
    let t_mu = f.apply(&g_mu, true);
    let t_m2 = f.apply(&g_m2, true);
    let t_xy = f.apply(&g_xy, true);
    let grad = (0..n).map(|p| t_mu[p] + 2.0 * x[p] * t_m2[p] + y[p] * t_xy[p]).collect();
    Ok((total * inv_n, grad))
}

/// `(1 - w) L1 + w (1 - SSIM)` and its gradient w.r.t. `a`.
pub fn render_loss(a: &SpectrumImage, b: &SpectrumImage, w: f64, opts: SsimOptions) -> Result<(LossBreakdown, Vec<f64>)> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::invalid(format!("SSIM weight {w} outside [0, 1]")));
    }
    let (l1, g1) = l1_loss(a, b)?;
    let (s, gs) = ssim(a, b, opts)?;
    let render = (1.0 - w) * l1 + w * (1.0 - s);
    let grad = g1.iter().zip(&gs).map(|(p, q)| (1.0 - w) * p - w * q).collect();
    let out = LossBreakdown {
        l1,
        d_ssim: 1.0 - s,
        render_loss: render,
        mask_reg: 0.0,
        total: render,
    };
    Ok((out, grad))
}

/// Adds `lambda * mean(sigmoid(m))`; returns the breakdown and the
/// gradient w.r.t. each mask score.
pub fn total_loss(render: LossBreakdown, mask_scores: &[f64], lambda: f64) -> Result<(LossBreakdown, Vec<f64>)> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("lambda {lambda} must be >= 0")));
    }
    let (reg, grad) = mask_regularizer(mask_scores)?;
    let out = LossBreakdown {
        mask_reg: reg,
        total: render.render_loss + lambda * reg,
        ..render
    };
    Ok((out, grad.into_iter().map(|g| lambda * g).collect()))
}

fn check_sets(centers: &[Vec3], cloud: &[Vec3]) -> Result<()> {
    if centers.is_empty() || cloud.is_empty() {
        return Err(Error::invalid("Chamfer distance needs two nonempty point sets"));
    }
    Ok(())
}

/// Symmetric mean squared nearest-neighbor distance, k-d tree accelerated.
pub fn chamfer_distance(centers: &[Vec3], cloud: &[Vec3]) -> Result<f64> {
    check_sets(centers, cloud)?;
    let tc = KdTree::build(centers);
    let tp = KdTree::build(cloud);
    let a: f64 = cloud.iter().map(|x| tc.nearest(x, None).unwrap().1).sum::<f64>() / cloud.len() as f64;
    let b: f64 = centers.iter().map(|m| tp.nearest(m, None).unwrap().1).sum::<f64>() / centers.len() as f64;
    Ok(a + b)
}

/// Reference O(N |P|) evaluation of [`chamfer_distance`].
pub fn chamfer_distance_brute(centers: &[Vec3], cloud: &[Vec3]) -> Result<f64> {
    check_sets(centers, cloud)?;
    let a: f64 = cloud.iter().map(|x| nearest_brute(centers, x, None).unwrap().1).sum::<f64>() / cloud.len() as f64;
    let b: f64 = centers.iter().map(|m| nearest_brute(cloud, m, None).unwrap().1).sum::<f64>() / centers.len() as f64;
    Ok(a + b)
}
