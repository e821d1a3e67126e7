//! Differentiable splatting of calibrated Gaussians onto the azimuth/elevation
//! grid.
//!
//! Primitives are depth-sorted by range (ties by index) and alpha-blended
//! front to back per pixel: `C = sum_i s_i g_i prod_{j<i} (1 - g_j)` with
//! `g_i = o_i M_i G'_i`, and the pixel value is `|C|` (or `|C|^2`). Pixels are
//! processed in 16x16 tiles; which primitives touch a pixel is decided per
//! pixel, so tiling never changes the result.

pub mod projection;

use nalgebra::{Matrix2, Matrix2x3};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::deform::{apply_calibration, apply_calibration_backward, Calibration, DeformCache, Deformed, DeformationNet};
use crate::error::{Error, Result};
use crate::geometry::{quat_to_matrix, quat_to_matrix_backward, sigmoid, sigmoid_grad, Mat3, Quat, Vec3};
use crate::mask::{mask_forward, validate_epsilon};
use crate::scene::Scene;
use crate::spectrum::{Grid, SpectrumImage};
use projection::{local_jacobian_hessian, project_covariance, project_mercator, wrap_azimuth, Projection};

pub const TILE: usize = 16;
/// Contributions below this alpha are skipped at a pixel.
pub const MIN_ALPHA: f64 = 1.0 / 255.0;
pub const MAX_ALPHA: f64 = 0.999;
/// Per-axis half-width of the screen-space footprint, in standard deviations.
pub const EXTENT_SIGMAS: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskMode {
    /// Binarized masks, no backward.
    Hard,
    /// Binarized forward, sigmoid-derivative backward.
    Ste,
    /// Every mask treated as 1.
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PixelMode {
    Magnitude,
    Power,
}

impl PixelMode {
    pub fn tag(self) -> u8 {
        match self {
            PixelMode::Magnitude => 0,
            PixelMode::Power => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(PixelMode::Magnitude),
            1 => Some(PixelMode::Power),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PixelMode::Magnitude => "magnitude",
            PixelMode::Power => "power",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "magnitude" => Some(PixelMode::Magnitude),
            "power" => Some(PixelMode::Power),
            _ => None,
        }
    }

    fn value(self, c: Complex64) -> f64 {
        match self {
            PixelMode::Magnitude => c.norm(),
            PixelMode::Power => c.norm_sqr(),
        }
    }

    /// `(dv/dRe C, dv/dIm C)` as a complex number.
    fn grad(self, c: Complex64) -> Complex64 {
        match self {
            PixelMode::Magnitude => {
                let n = c.norm();
                if n > 0.0 {
                    c / n
                } else {
                    Complex64::new(0.0, 0.0)
                }
            }
            PixelMode::Power => 2.0 * c,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderOptions {
    pub grid: Grid,
    pub epsilon: f64,
    pub mask_mode: MaskMode,
    pub pixel_mode: PixelMode,
}

impl RenderOptions {
    pub fn new(grid: Grid, epsilon: f64, mask_mode: MaskMode) -> Self {
        Self {
            grid,
            epsilon,
            mask_mode,
            pixel_mode: PixelMode::Magnitude,
        }
    }
}

/// Screen-space splat of one primitive.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedGaussian {
    pub source_index: usize,
    /// `(azimuth, elevation)`, degrees.
    pub center2d: [f64; 2],
    /// deg^2.
    pub cov2d: Matrix2<f64>,
    pub depth: f64,
    /// Opacity times mask.
    pub opacity: f64,
    pub signal: Complex64,
    pub mask: f64,
    /// Inverse covariance `(a, b, c)` of `[[a, b], [b, c]]`.
    conic: [f64; 3],
    /// Footprint half-widths, degrees.
    extent: [f64; 2],
}

impl ProjectedGaussian {
    #[inline]
    fn alpha_at(&self, az: f64, el: f64) -> Option<(f64, f64, f64, f64)> {
        let dx = wrap_azimuth(az - self.center2d[0]);
        let dy = el - self.center2d[1];
        if dx.abs() > self.extent[0] || dy.abs() > self.extent[1] {
            return None;
        }
        let [a, b, c] = self.conic;
        let g = (-0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy)).exp();
        let gamma = self.opacity * g;
        if gamma < MIN_ALPHA {
            return None;
        }
        Some((gamma, g, dx, dy))
    }
}

/// Forward intermediates of one visible primitive kept for the backward pass.
#[derive(Clone, Debug)]
struct PrimitiveTrace {
    projection: Projection,
    deformed: Deformed,
    rot: Mat3,
    /// Diagonal of `M^2 S^2`.
    d2: Vec3,
    cov3d: Mat3,
    base_opacity: f64,
    mask_grad: f64,
}

#[derive(Clone, Copy, Debug)]
struct Record {
    /// Index into the tile's primitive list.
    local: u32,
    gamma: f64,
    transmittance: f64,
    clamped: bool,
}

#[derive(Clone, Copy, Debug)]
struct PixelSpan {
    pixel: u32,
    start: u32,
    len: u32,
    accum: Complex64,
}

#[derive(Clone, Debug, Default)]
struct TileOutput {
    /// Indices into the visible list, in depth order.
    prims: Vec<u32>,
    pixels: Vec<PixelSpan>,
    records: Vec<Record>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RenderStats {
    pub visible: usize,
    pub masked_out: usize,
    pub degenerate: usize,
    pub behind: usize,
}

/// Everything needed to backpropagate one render.
#[derive(Clone, Debug)]
pub struct RenderGraph {
    options: RenderOptions,
    n_primitives: usize,
    visible: Vec<ProjectedGaussian>,
    traces: Vec<PrimitiveTrace>,
    deform: DeformCache,
    tiles: Vec<TileOutput>,
    pub stats: RenderStats,
}

impl RenderGraph {
    pub fn options(&self) -> &RenderOptions {
        &self.options
    }

    pub fn projected(&self) -> &[ProjectedGaussian] {
        &self.visible
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PrimitiveGrads {
    pub mu: Vec3,
    pub log_scale: Vec3,
    pub rotation: Quat,
    pub opacity_logit: f64,
    /// `(dL/dRe s, dL/dIm s)`.
    pub signal: Complex64,
    pub mask_score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneGrads {
    pub primitives: Vec<PrimitiveGrads>,
    pub theta: Vec<f64>,
    /// Norm of the gradient on each primitive's screen-space center (zero
    /// for primitives that were not visible).
    pub screen: Vec<f64>,
    pub visible: Vec<bool>,
}

struct Tiling {
    cols: usize,
    rows: usize,
}

impl Tiling {
    fn new(grid: Grid) -> Self {
        Self {
            cols: grid.n_az.div_ceil(TILE),
            rows: grid.n_el.div_ceil(TILE),
        }
    }

    fn count(&self) -> usize {
        self.cols * self.rows
    }
}

fn conic_of(cov: &Matrix2<f64>) -> [f64; 3] {
    let (a, b, c) = (cov[(0, 0)], cov[(0, 1)], cov[(1, 1)]);
    let det = a * c - b * b;
    [c / det, -b / det, a / det]
}

/// Tile indices touched by a splat, conservatively padded by one pixel.
fn tiles_for(g: &ProjectedGaussian, grid: Grid, tiling: &Tiling, out: &mut Vec<usize>) {
    out.clear();
    let (sa, se) = (grid.az_step_deg(), grid.el_step_deg());
    let row_lo = ((g.center2d[1] - g.extent[1]) / se).ceil() as i64 - 1;
    let row_hi = ((g.center2d[1] + g.extent[1]) / se).floor() as i64 + 1;
    let row_lo = row_lo.max(0);
    let row_hi = row_hi.min(grid.n_el as i64 - 1);
    if row_lo > row_hi {
        return;
    }
    let n = grid.n_az as i64;
    let col_lo = ((g.center2d[0] - g.extent[0]) / sa).ceil() as i64 - 1;
    let col_hi = ((g.center2d[0] + g.extent[0]) / sa).floor() as i64 + 1;
    let mut spans: Vec<(i64, i64)> = Vec::with_capacity(2);
    if col_hi - col_lo + 1 >= n {
        spans.push((0, n - 1));
    } else if col_lo < 0 {
        spans.push((col_lo + n, n - 1));
        spans.push((0, col_hi));
    } else if col_hi >= n {
        spans.push((col_lo, n - 1));
        spans.push((0, col_hi - n));
    } else {
        spans.push((col_lo, col_hi));
    }
    let (tr_lo, tr_hi) = (row_lo as usize / TILE, row_hi as usize / TILE);
    let mut cols: Vec<usize> = Vec::with_capacity(tiling.cols);
    for (lo, hi) in spans {
        for tc in (lo as usize / TILE)..=(hi as usize / TILE) {
            if !cols.contains(&tc) {
                cols.push(tc);
            }
        }
    }
    cols.sort_unstable();
    for tr in tr_lo..=tr_hi {
        for &tc in &cols {
            out.push(tr * tiling.cols + tc);
        }
    }
    out.sort_unstable();
}

fn bin_tiles(visible: &[ProjectedGaussian], grid: Grid) -> Vec<Vec<u32>> {
    let tiling = Tiling::new(grid);
    let mut lists = vec![Vec::new(); tiling.count()];
    let mut scratch = Vec::new();
    for (i, g) in visible.iter().enumerate() {
        tiles_for(g, grid, &tiling, &mut scratch);
        for &t in &scratch {
            lists[t].push(i as u32);
        }
    }
    lists
}

fn raster_tile(
    tile: usize,
    prims: Vec<u32>,
    visible: &[ProjectedGaussian],
    grid: Grid,
    pixel_mode: PixelMode,
    record: bool,
    image: &mut Vec<(usize, f64)>,
) -> TileOutput {
    let tiling = Tiling::new(grid);
    let (tr, tc) = (tile / tiling.cols, tile % tiling.cols);
    let mut out = TileOutput::default();
    for a in tc * TILE..((tc + 1) * TILE).min(grid.n_az) {
        for b in tr * TILE..((tr + 1) * TILE).min(grid.n_el) {
            let (az, el) = grid.center_deg(a, b);
            let start = out.records.len();
            let mut accum = Complex64::new(0.0, 0.0);
            let mut t = 1.0;
            for (local, &vi) in prims.iter().enumerate() {
                let g = &visible[vi as usize];
                let Some((gamma, _, _, _)) = g.alpha_at(az, el) else {
                    continue;
                };
                let clamped = gamma > MAX_ALPHA;
                let gamma = gamma.min(MAX_ALPHA);
                accum += g.signal * (gamma * t);
                if record {
                    out.records.push(Record {
                        local: local as u32,
                        gamma,
                        transmittance: t,
                        clamped,
                    });
                }
                t *= 1.0 - gamma;
            }
            let pixel = grid.index(a, b);
            image.push((pixel, pixel_mode.value(accum)));
            if record {
                out.pixels.push(PixelSpan {
                    pixel: pixel as u32,
                    start: start as u32,
                    len: (out.records.len() - start) as u32,
                    accum,
                });
            }
        }
    }
    if record {
        out.prims = prims;
    }
    out
}

/// Rasterizes depth-sorted splats. Returns the image and, when `record` is
/// set, the per-tile blending records.
fn rasterize(
    visible: &[ProjectedGaussian],
    grid: Grid,
    pixel_mode: PixelMode,
    record: bool,
) -> (SpectrumImage, Vec<TileOutput>) {
    let lists = bin_tiles(visible, grid);
    let results: Vec<(TileOutput, Vec<(usize, f64)>)> = lists
        .into_par_iter()
        .enumerate()
        .map(|(tile, prims)| {
            let mut image = Vec::with_capacity(TILE * TILE);
            let out = raster_tile(tile, prims, visible, grid, pixel_mode, record, &mut image);
            (out, image)
        })
        .collect();
    let mut values = vec![0.0; grid.len()];
    let mut tiles = Vec::with_capacity(if record { results.len() } else { 0 });
    for (out, image) in results {
        for (p, v) in image {
            values[p] = v;
        }
        if record {
            tiles.push(out);
        }
    }
    (SpectrumImage::from_values_unchecked(grid, values), tiles)
}

fn sort_by_depth(visible: &mut Vec<ProjectedGaussian>, traces: Option<&mut Vec<PrimitiveTrace>>) {
    let mut order: Vec<usize> = (0..visible.len()).collect();
    order.sort_by(|&i, &j| {
        visible[i]
            .depth
            .total_cmp(&visible[j].depth)
            .then(visible[i].source_index.cmp(&visible[j].source_index))
    });
    let sorted: Vec<ProjectedGaussian> = order.iter().map(|&i| visible[i].clone()).collect();
    *visible = sorted;
    if let Some(tr) = traces {
        let sorted: Vec<PrimitiveTrace> = order.iter().map(|&i| tr[i].clone()).collect();
        *tr = sorted;
    }
}

fn check_inputs(scene: &Scene, p_tx: &Vec3) -> Result<()> {
    if scene.is_empty() {
        return Err(Error::invalid("cannot render an empty scene"));
    }
    if !(p_tx.iter().all(|v| v.is_finite())) {
        return Err(Error::invalid("transmitter position is not finite"));
    }
    Ok(())
}

/// Renders the scene for a transmitter at `p_tx` and keeps the blending
/// graph for [`render_backward`].
pub fn render(
    scene: &Scene,
    p_tx: &Vec3,
    net: &DeformationNet,
    options: &RenderOptions,
) -> Result<(SpectrumImage, RenderGraph)> {
    check_inputs(scene, p_tx)?;
    if options.mask_mode != MaskMode::Off {
        validate_epsilon(options.epsilon)?;
    }
    let centers = scene.centers();
    let (cals, deform) = net.forward_batch(&centers, p_tx);
    let mut stats = RenderStats::default();
    let mut visible = Vec::new();
    let mut traces = Vec::new();
    for (i, (p, cal)) in scene.primitives.iter().zip(&cals).enumerate() {
        let (mask, mask_grad) = match options.mask_mode {
            MaskMode::Off => (1.0, 0.0),
            MaskMode::Hard | MaskMode::Ste => mask_forward(p.mask_score, options.epsilon),
        };
        if mask == 0.0 {
            stats.masked_out += 1;
            continue;
        }
        let base_opacity = sigmoid(p.opacity_logit);
        let opacity = base_opacity * mask;
        if opacity < MIN_ALPHA {
            continue;
        }
        let proj = match project_mercator(&p.mu, &scene.receiver) {
            Ok(pr) => pr,
            Err(projection::ProjectionError::Degenerate) => {
                stats.degenerate += 1;
                continue;
            }
            Err(projection::ProjectionError::Behind) => {
                stats.behind += 1;
                continue;
            }
        };
        let deformed = apply_calibration(p, cal);
        let rot = quat_to_matrix(&deformed.rotation);
        let d2 = deformed.log_scale.map(|l| (2.0 * l).exp()) * (mask * mask);
        let cov3d = rot * Mat3::from_diagonal(&d2) * rot.transpose();
        let cov2d = project_covariance(&cov3d, &proj.jacobian);
        visible.push(ProjectedGaussian {
            source_index: i,
            center2d: proj.center,
            cov2d,
            depth: proj.depth,
            opacity,
            signal: deformed.signal,
            mask,
            conic: conic_of(&cov2d),
            extent: [
                EXTENT_SIGMAS * cov2d[(0, 0)].sqrt(),
                EXTENT_SIGMAS * cov2d[(1, 1)].sqrt(),
            ],
        });
        traces.push(PrimitiveTrace {
            projection: proj,
            deformed,
            rot,
            d2,
            cov3d,
            base_opacity,
            mask_grad,
        });
    }
    stats.visible = visible.len();
    sort_by_depth(&mut visible, Some(&mut traces));
    let (image, tiles) = rasterize(&visible, options.grid, options.pixel_mode, true);
    let graph = RenderGraph {
        options: *options,
        n_primitives: scene.len(),
        visible,
        traces,
        deform,
        tiles,
        stats,
    };
    Ok((image, graph))
}

/// Inference path for an already pruned scene: no masks, no graph.
pub fn render_pruned(
    scene: &Scene,
    p_tx: &Vec3,
    net: &DeformationNet,
    grid: Grid,
    pixel_mode: PixelMode,
) -> Result<SpectrumImage> {
    check_inputs(scene, p_tx)?;
    let cals = net.forward_batch_inference(&scene.centers(), p_tx);
    let mut visible: Vec<ProjectedGaussian> = scene
        .primitives
        .par_iter()
        .zip(cals.par_iter())
        .enumerate()
        .filter_map(|(i, (p, cal))| {
            let opacity = sigmoid(p.opacity_logit);
            if opacity < MIN_ALPHA {
                return None;
            }
            let proj = project_mercator(&p.mu, &scene.receiver).ok()?;
            let deformed = apply_calibration(p, cal);
            let rot = quat_to_matrix(&deformed.rotation);
            let d2 = deformed.log_scale.map(|l| (2.0 * l).exp());
            let cov3d = rot * Mat3::from_diagonal(&d2) * rot.transpose();
            let cov2d = project_covariance(&cov3d, &proj.jacobian);
            Some(ProjectedGaussian {
                source_index: i,
                center2d: proj.center,
                cov2d,
                depth: proj.depth,
                opacity,
                signal: deformed.signal,
                mask: 1.0,
                conic: conic_of(&cov2d),
                extent: [
                    EXTENT_SIGMAS * cov2d[(0, 0)].sqrt(),
                    EXTENT_SIGMAS * cov2d[(1, 1)].sqrt(),
                ],
            })
        })
        .collect();
    sort_by_depth(&mut visible, None);
    Ok(rasterize(&visible, grid, pixel_mode, false).0)
}

/// Screen-space gradient accumulator of one splat:
/// `[d center az, d center el, d conic a, d conic b, d conic c, d opacity, d Re s, d Im s]`.
type SplatGrad = [f64; 8];

fn backward_tile(
    tile: &TileOutput,
    visible: &[ProjectedGaussian],
    grid: Grid,
    pixel_mode: PixelMode,
    d_pixels: &[f64],
) -> Vec<SplatGrad> {
    let mut acc = vec![[0.0; 8]; tile.prims.len()];
    for span in &tile.pixels {
        let g = d_pixels[span.pixel as usize];
        if g == 0.0 || span.len == 0 {
            continue;
        }
        let gc = pixel_mode.grad(span.accum) * g;
        let pixel = span.pixel as usize;
        let (az, el) = grid.center_deg(pixel / grid.n_el, pixel % grid.n_el);
        let mut after = Complex64::new(0.0, 0.0);
        let recs = &tile.records[span.start as usize..(span.start + span.len) as usize];
        for r in recs.iter().rev() {
            let pg = &visible[tile.prims[r.local as usize] as usize];
            let a = &mut acc[r.local as usize];
            let gt = r.gamma * r.transmittance;
            a[6] += gc.re * gt;
            a[7] += gc.im * gt;
            let dc_dgamma = pg.signal * r.transmittance - after / (1.0 - r.gamma);
            let d_gamma = gc.re * dc_dgamma.re + gc.im * dc_dgamma.im;
            after += pg.signal * gt;
            if r.clamped {
                continue;
            }
            let dx = wrap_azimuth(az - pg.center2d[0]);
            let dy = el - pg.center2d[1];
            let [ca, cb, cc] = pg.conic;
            let gauss = r.gamma / pg.opacity;
            a[5] += gauss * d_gamma;
            // dL/dq with G = exp(-q/2)
            let d_q = -0.5 * gauss * pg.opacity * d_gamma;
            a[2] += d_q * dx * dx;
            a[3] += d_q * 2.0 * dx * dy;
            a[4] += d_q * dy * dy;
            a[0] -= d_q * (2.0 * ca * dx + 2.0 * cb * dy);
            a[1] -= d_q * (2.0 * cb * dx + 2.0 * cc * dy);
        }
    }
    acc
}

/// Reverse pass of [`render`]. `d_pixels` is dL/d(pixel value) on the
/// render grid; `scene` and `net` must be unchanged since the forward call.
pub fn render_backward(
    graph: &RenderGraph,
    scene: &Scene,
    net: &DeformationNet,
    d_pixels: &[f64],
) -> Result<SceneGrads> {
    if graph.options.mask_mode == MaskMode::Hard {
        return Err(Error::Contract("hard-mask renders have no backward pass".into()));
    }
    if scene.len() != graph.n_primitives {
        return Err(Error::Contract("scene changed since the forward render".into()));
    }
    let grid = graph.options.grid;
    if d_pixels.len() != grid.len() {
        return Err(Error::Contract(format!(
            "{} pixel gradients for a {}-pixel grid",
            d_pixels.len(),
            grid.len()
        )));
    }
    let per_tile: Vec<Vec<SplatGrad>> = graph
        .tiles
        .par_iter()
        .map(|t| backward_tile(t, &graph.visible, grid, graph.options.pixel_mode, d_pixels))
        .collect();
    let mut splat = vec![[0.0; 8]; graph.visible.len()];
    for (tile, acc) in graph.tiles.iter().zip(&per_tile) {
        for (local, &vi) in tile.prims.iter().enumerate() {
            let dst = &mut splat[vi as usize];
            for k in 0..8 {
                dst[k] += acc[local][k];
            }
        }
    }

    let n = scene.len();
    let mut prims = vec![PrimitiveGrads::default(); n];
    let mut d_cal = vec![Calibration::default(); n];
    let mut screen = vec![0.0; n];
    let mut visible_flags = vec![false; n];
    let orientation = scene.receiver.orientation;
    for ((pg, tr), sg) in graph.visible.iter().zip(&graph.traces).zip(&splat) {
        let i = pg.source_index;
        visible_flags[i] = true;
        let d_center = nalgebra::Vector2::new(sg[0], sg[1]);
        screen[i] = d_center.norm();

        // conic -> 2D covariance
        let inv = Matrix2::new(pg.conic[0], pg.conic[1], pg.conic[1], pg.conic[2]);
        let g_inv = Matrix2::new(sg[2], 0.5 * sg[3], 0.5 * sg[3], sg[4]);
        let g_cov2 = -(inv * g_inv * inv);
        // 2D covariance -> 3D covariance and Jacobian
        let j = tr.projection.jacobian;
        let g_cov3: Mat3 = j.transpose() * g_cov2 * j;
        let g_j: Matrix2x3<f64> = 2.0 * g_cov2 * j * tr.cov3d;
        // Jacobian and center -> world position
        let g_j_local = g_j * orientation;
        let hess = local_jacobian_hessian(&tr.projection.local);
        let j_local = j * orientation;
        let mut g_local = j_local.transpose() * d_center;
        for k in 0..3 {
            g_local[k] += g_j_local.component_mul(&hess[k]).sum();
        }
        let d_mu = orientation * g_local;

        // 3D covariance -> deformed scale and rotation
        let rt_g_r = tr.rot.transpose() * g_cov3 * tr.rot;
        let d_log_scale = Vec3::from_fn(|k, _| 2.0 * tr.d2[k] * rt_g_r[(k, k)]);
        let g_rot = 2.0 * g_cov3 * tr.rot * Mat3::from_diagonal(&tr.d2);
        let d_quat = quat_to_matrix_backward(&tr.deformed.rotation, &g_rot);
        let d_signal = Complex64::new(sg[6], sg[7]);

        let p = &scene.primitives[i];
        let cg = apply_calibration_backward(p, &tr.deformed, &d_log_scale, &d_quat, d_signal);
        let d_opacity = sg[5];
        let mut d_mask_score = 0.0;
        if graph.options.mask_mode == MaskMode::Ste {
            let d_m = d_opacity * tr.base_opacity + d_log_scale.sum() / pg.mask;
            d_mask_score = tr.mask_grad * d_m;
        }
        prims[i] = PrimitiveGrads {
            mu: d_mu,
            log_scale: cg.log_scale,
            rotation: cg.rotation,
            opacity_logit: d_opacity * pg.mask * sigmoid_grad(p.opacity_logit),
            signal: cg.signal,
            mask_score: d_mask_score,
        };
        d_cal[i] = cg.calibration;
    }
    let net_grads = net.backward_batch(&graph.deform, &d_cal)?;
    for (pgr, dm) in prims.iter_mut().zip(&net_grads.mu) {
        pgr.mu += dm;
    }
    Ok(SceneGrads {
        primitives: prims,
        theta: net_grads.theta,
        screen,
        visible: visible_flags,
    })
}
