//! Brute-force multipath spectrum generator.
//!
//! A transmitter reaches the receiving array over a line-of-sight path plus
//! single-bounce specular reflections off planar facets (image-source
//! method). Each path is a plane wave across the array; the per-element
//! complex sums give measured phases, which are turned into an
//! angle-of-arrival power spectrum over the 1-degree azimuth/elevation grid.
//!
//! Direction convention: azimuth `alpha = atan2(y, x)` in the array frame and
//! elevation `beta` is the angle off the array boresight (+z), so the unit
//! arrival vector is `(sin b cos a, sin b sin a, cos b)`.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Aabb, Mat3, ReceiverFrame, Vec3};
use crate::scene::PointCloud;
use crate::spectrum::{Grid, SpectrumImage};

/// Carrier wavelength at 915 MHz, meters.
pub const DEFAULT_WAVELENGTH: f64 = 0.327_635;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArraySpec {
    /// Total element count K; must be a perfect square.
    pub antennas: usize,
    /// Element pitch in meters.
    pub spacing: f64,
    /// Carrier wavelength in meters.
    pub wavelength: f64,
}

impl Default for ArraySpec {
    fn default() -> Self {
        Self::half_wavelength(16, DEFAULT_WAVELENGTH)
    }
}

impl ArraySpec {
    pub fn half_wavelength(antennas: usize, wavelength: f64) -> Self {
        Self {
            antennas,
            spacing: 0.5 * wavelength,
            wavelength,
        }
    }

    pub fn side(&self) -> usize {
        (self.antennas as f64).sqrt().round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let side = self.side();
        if self.antennas == 0 || side * side != self.antennas {
            return Err(Error::invalid(format!(
                "antenna count {} is not a nonzero perfect square",
                self.antennas
            )));
        }
        if !(self.spacing > 0.0) || !(self.wavelength > 0.0) {
            return Err(Error::invalid("array spacing and wavelength must be positive"));
        }
        Ok(())
    }

    pub fn wavenumber(&self) -> f64 {
        TAU / self.wavelength
    }
}

/// Arrival direction in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    pub azimuth: f64,
    pub elevation: f64,
}

impl Direction {
    pub fn new(azimuth: f64, elevation: f64) -> Self {
        Self {
            azimuth,
            elevation,
        }
    }

    pub fn from_degrees(azimuth: f64, elevation: f64) -> Self {
        Self::new(azimuth.to_radians(), elevation.to_radians())
    }

    /// Direction of an array-frame vector. Arrivals from behind the array
    /// plane fold onto the front hemisphere, which a planar array cannot
    /// distinguish anyway.
    pub fn from_local(v: &Vec3) -> Self {
        let r = v.norm();
        let azimuth = v.y.atan2(v.x).rem_euclid(TAU);
        let elevation = (v.z.abs() / r).clamp(0.0, 1.0).acos();
        Self {
            azimuth,
            elevation,
        }
    }

    pub fn unit_vector(&self) -> Vec3 {
        let (sa, ca) = self.azimuth.sin_cos();
        let (sb, cb) = self.elevation.sin_cos();
        Vec3::new(sb * ca, sb * sa, cb)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagationPath {
    /// Attenuation factor (>= 0).
    pub delta_a: f64,
    /// Phase shift in radians.
    pub delta_phi: f64,
    pub direction: Direction,
}

/// Plane-wave phase of element `(m, n)` relative to element `(0, 0)`.
pub fn theoretical_phase_delta(array: &ArraySpec, m: usize, n: usize, direction: Direction) -> f64 {
    let u = direction.unit_vector();
    array.wavenumber() * array.spacing * (m as f64 * u.x + n as f64 * u.y)
}

/// `A e^{j phi} sum_l dA_l e^{j dphi_l}`.
pub fn received_superposition(amplitude: f64, phase: f64, paths: &[PropagationPath]) -> Result<Complex64> {
    if paths.is_empty() {
        return Err(Error::invalid("received_superposition needs at least one path"));
    }
    let sum: Complex64 = paths
        .iter()
        .map(|p| Complex64::from_polar(p.delta_a, p.delta_phi))
        .sum();
    Ok(Complex64::from_polar(amplitude, phase) * sum)
}

/// Angle-of-arrival spectrum from per-element phases (index `m * side + n`).
///
/// `P(a, b) = |sum_{m,n} exp(j (dth^_{mn} - dth_{mn}(a, b)))|^2 / K`, where
/// `dth^` are the measured phases relative to element (0, 0).
pub fn spatial_spectrum(measured_phases: &[f64], array: &ArraySpec, grid: Grid) -> Result<SpectrumImage> {
    array.validate()?;
    let side = array.side();
    if measured_phases.len() != array.antennas {
        return Err(Error::invalid(format!(
            "expected {} measured phases ({side}x{side}), got {}",
            array.antennas,
            measured_phases.len()
        )));
    }
    let reference = measured_phases[0];
    let coeffs: Vec<Complex64> = measured_phases
        .iter()
        .map(|p| Complex64::from_polar(1.0, p - reference))
        .collect();
    let kd = array.wavenumber() * array.spacing;
    let k = array.antennas as f64;
    let mut values = vec![0.0; grid.len()];
    let mut row_phase = vec![Complex64::new(0.0, 0.0); side];
    for a in 0..grid.n_az {
        for b in 0..grid.n_el {
            let (az, el) = grid.center_deg(a, b);
            let u = Direction::from_degrees(az, el).unit_vector();
            // e^{-j kd (m u_x + n u_y)} = step_m^m * step_n^n
            let step_m = Complex64::from_polar(1.0, -kd * u.x);
            let step_n = Complex64::from_polar(1.0, -kd * u.y);
            let mut pn = Complex64::new(1.0, 0.0);
            for slot in row_phase.iter_mut() {
                *slot = pn;
                pn *= step_n;
            }
            let mut pm = Complex64::new(1.0, 0.0);
            let mut total = Complex64::new(0.0, 0.0);
            for m in 0..side {
                let mut row = Complex64::new(0.0, 0.0);
                for n in 0..side {
                    row += coeffs[m * side + n] * row_phase[n];
                }
                total += row * pm;
                pm *= step_m;
            }
            values[grid.index(a, b)] = total.norm_sqr() / k;
        }
    }
    Ok(SpectrumImage::from_values_unchecked(grid, values))
}

/// Rectangular reflecting facet spanned by `corner + s*edge_u + t*edge_v`,
/// `s, t in [0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reflector {
    pub corner: [f64; 3],
    pub edge_u: [f64; 3],
    pub edge_v: [f64; 3],
    /// Amplitude reflection coefficient in [0, 1].
    pub reflectance: f64,
    /// Phase added on reflection, radians.
    #[serde(default = "default_reflection_phase")]
    pub phase_shift: f64,
}

fn default_reflection_phase() -> f64 {
    PI
}

impl Reflector {
    pub fn new(corner: Vec3, edge_u: Vec3, edge_v: Vec3, reflectance: f64) -> Self {
        Self {
            corner: corner.into(),
            edge_u: edge_u.into(),
            edge_v: edge_v.into(),
            reflectance,
            phase_shift: PI,
        }
    }

    fn corner_v(&self) -> Vec3 {
        Vec3::from(self.corner)
    }

    fn u(&self) -> Vec3 {
        Vec3::from(self.edge_u)
    }

    fn v(&self) -> Vec3 {
        Vec3::from(self.edge_v)
    }

    pub fn normal(&self) -> Vec3 {
        self.u().cross(&self.v()).normalize()
    }

    pub fn area(&self) -> f64 {
        self.u().cross(&self.v()).norm()
    }

    fn signed_distance(&self, p: &Vec3) -> f64 {
        (p - self.corner_v()).dot(&self.normal())
    }

    /// Facet coordinates `(s, t)` of a point on the facet plane.
    fn plane_coords(&self, p: &Vec3) -> (f64, f64) {
        let (u, v) = (self.u(), self.v());
        let d = p - self.corner_v();
        let (uu, uv, vv) = (u.dot(&u), u.dot(&v), v.dot(&v));
        let (du, dv) = (d.dot(&u), d.dot(&v));
        let det = uu * vv - uv * uv;
        ((du * vv - dv * uv) / det, (dv * uu - du * uv) / det)
    }

    pub fn point_at(&self, s: f64, t: f64) -> Vec3 {
        self.corner_v() + s * self.u() + t * self.v()
    }

    /// Whether the open segment `a -> b` crosses the facet.
    fn blocks(&self, a: &Vec3, b: &Vec3) -> bool {
        let (da, db) = (self.signed_distance(a), self.signed_distance(b));
        let tol = 1e-9;
        if (da > tol && db > tol) || (da < -tol && db < -tol) || (da.abs() <= tol && db.abs() <= tol) {
            return false;
        }
        let t = da / (da - db);
        if !(t > 1e-9 && t < 1.0 - 1e-9) {
            return false;
        }
        let hit = a + t * (b - a);
        let (s, w) = self.plane_coords(&hit);
        (0.0..=1.0).contains(&s) && (0.0..=1.0).contains(&w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.area() > 0.0) {
            return Err(Error::invalid("reflector edges must span a nonzero area"));
        }
        if !(0.0..=1.0).contains(&self.reflectance) {
            return Err(Error::invalid(format!(
                "reflectance {} outside [0, 1]",
                self.reflectance
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSceneSpec {
    pub reflectors: Vec<Reflector>,
    pub receiver: ReceiverFrame,
    /// Maximum number of paths kept per transmitter (strongest first).
    pub max_paths: usize,
    pub array: ArraySpec,
    /// Transmitted amplitude `A`.
    pub amplitude: f64,
    /// Transmitted phase `phi`, radians.
    pub phase: f64,
    pub seed: u64,
    /// Scene extent; transmitters must lie inside.
    pub bounds: Aabb,
    /// Region transmitter positions are sampled from.
    pub tx_region: Aabb,
    /// Number of points sampled on the reflectors for `cloud.txt` (0 = none).
    #[serde(default)]
    pub cloud_points: usize,
}

impl SyntheticSceneSpec {
    /// Free space with a single receiver; every transmitter yields exactly
    /// one line-of-sight path.
    pub fn free_space(receiver: ReceiverFrame, array: ArraySpec) -> Self {
        Self {
            reflectors: Vec::new(),
            receiver,
            max_paths: 1,
            array,
            amplitude: 1.0,
            phase: 0.0,
            seed: 0,
            bounds: Aabb::new([-1e3; 3], [1e3; 3]),
            tx_region: Aabb::new([-5.0; 3], [5.0; 3]),
            cloud_points: 0,
        }
    }

    /// 6 x 5 x 3 m room with a ceiling-mounted array looking down, a floor
    /// and three walls as reflectors.
    pub fn benchmark() -> Self {
        let gamma = 0.3;
        let reflectors = vec![
            // floor
            Reflector::new(Vec3::zeros(), Vec3::new(6.0, 0.0, 0.0), Vec3::new(0.0, 5.0, 0.0), gamma),
            // walls x = 0, x = 6, y = 5
            Reflector::new(Vec3::zeros(), Vec3::new(0.0, 5.0, 0.0), Vec3::new(0.0, 0.0, 3.0), gamma),
            Reflector::new(Vec3::new(6.0, 0.0, 0.0), Vec3::new(0.0, 0.0, 3.0), Vec3::new(0.0, 5.0, 0.0), gamma),
            Reflector::new(Vec3::new(0.0, 5.0, 0.0), Vec3::new(0.0, 0.0, 3.0), Vec3::new(6.0, 0.0, 0.0), gamma),
        ];
        // array x along world x, boresight straight down
        let orientation = Mat3::from_diagonal(&Vec3::new(1.0, -1.0, -1.0));
        Self {
            reflectors,
            receiver: ReceiverFrame::new(Vec3::new(2.4, 2.0, 2.9), orientation),
            max_paths: 5,
            array: ArraySpec::default(),
            amplitude: 1.0,
            phase: 0.0,
            seed: 7,
            bounds: Aabb::new([0.0, 0.0, 0.0], [6.0, 5.0, 3.0]),
            tx_region: Aabb::new([0.5, 0.5, 0.3], [5.5, 4.5, 1.5]),
            cloud_points: 1500,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.array.validate()?;
        if self.max_paths == 0 {
            return Err(Error::invalid("path-count limit must be at least 1"));
        }
        for r in &self.reflectors {
            r.validate()?;
        }
        let o = &self.receiver.orientation;
        if (o * o.transpose() - Mat3::identity()).abs().max() > 1e-6 {
            return Err(Error::invalid("receiver orientation is not a rotation"));
        }
        if !(self.tx_region.volume() >= 0.0) || !(self.bounds.volume() > 0.0) {
            return Err(Error::invalid("scene bounds must have positive volume"));
        }
        Ok(())
    }

    /// Line-of-sight and single-bounce paths from `p_tx`, strongest first,
    /// truncated to `max_paths`.
    pub fn trace_paths(&self, p_tx: &Vec3) -> Vec<PropagationPath> {
        let rx = self.receiver.origin;
        let k = self.array.wavenumber();
        let mut found: Vec<(PropagationPath, usize)> = Vec::new();
        let clear = |a: &Vec3, b: &Vec3, skip: Option<usize>| {
            self.reflectors
                .iter()
                .enumerate()
                .all(|(i, r)| Some(i) == skip || !r.blocks(a, b))
        };
        let make = |delta_a: f64, length: f64, extra_phase: f64, toward: &Vec3| PropagationPath {
            delta_a,
            delta_phi: (extra_phase - k * length).rem_euclid(TAU),
            direction: Direction::from_local(&self.receiver.dir_to_local(toward)),
        };

        let los = p_tx - rx;
        let d = los.norm();
        if d > 1e-9 && clear(p_tx, &rx, None) {
            found.push((make(1.0 / d, d, 0.0, &los), 0));
        }
        for (i, r) in self.reflectors.iter().enumerate() {
            let (st, sr) = (r.signed_distance(p_tx), r.signed_distance(&rx));
            if st * sr <= 0.0 || r.reflectance == 0.0 {
                continue;
            }
            let image = p_tx - 2.0 * st * r.normal();
            let t = sr / (sr - r.signed_distance(&image));
            let bounce = rx + t * (image - rx);
            let (s, w) = r.plane_coords(&bounce);
            if !((0.0..=1.0).contains(&s) && (0.0..=1.0).contains(&w)) {
                continue;
            }
            if !clear(p_tx, &bounce, Some(i)) || !clear(&bounce, &rx, Some(i)) {
                continue;
            }
            let length = (image - rx).norm();
            found.push((make(r.reflectance / length, length, r.phase_shift, &(bounce - rx)), i + 1));
        }
        found.sort_by(|a, b| b.0.delta_a.total_cmp(&a.0.delta_a).then(a.1.cmp(&b.1)));
        found.truncate(self.max_paths);
        found.into_iter().map(|(p, _)| p).collect()
    }

    /// Per-element received phases (index `m * side + n`), or `None` when no
    /// path reaches the receiver.
    pub fn element_phases(&self, paths: &[PropagationPath]) -> Result<Option<Vec<f64>>> {
        if paths.is_empty() {
            return Ok(None);
        }
        let side = self.array.side();
        let mut phases = Vec::with_capacity(self.array.antennas);
        let mut shifted = paths.to_vec();
        for m in 0..side {
            for n in 0..side {
                for (s, p) in shifted.iter_mut().zip(paths) {
                    s.delta_phi = p.delta_phi + theoretical_phase_delta(&self.array, m, n, p.direction);
                }
                phases.push(received_superposition(self.amplitude, self.phase, &shifted)?.arg());
            }
        }
        Ok(Some(phases))
    }

    /// Uniform transmitter positions from `tx_region`, seeded by `seed`.
    pub fn sample_tx_positions(&self, count: usize) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x7478_706f_7365);
        let b = &self.tx_region;
        (0..count)
            .map(|_| Vec3::from_fn(|k, _| rng.gen_range(b.min[k]..=b.max[k])))
            .collect()
    }

    /// `cloud_points` points on the reflector facets, allocated by area.
    pub fn sample_point_cloud(&self) -> Result<Option<PointCloud>> {
        if self.cloud_points == 0 || self.reflectors.is_empty() {
            return Ok(None);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x63_6c6f_7564);
        let total: f64 = self.reflectors.iter().map(Reflector::area).sum();
        let mut points = Vec::with_capacity(self.cloud_points);
        let mut assigned = 0usize;
        for (i, r) in self.reflectors.iter().enumerate() {
            let count = if i + 1 == self.reflectors.len() {
                self.cloud_points - assigned
            } else {
                ((r.area() / total) * self.cloud_points as f64).round() as usize
            };
            assigned += count;
            for _ in 0..count {
                // single precision, so checkpointed centers reproduce it exactly
                points.push(r.point_at(rng.gen(), rng.gen()).map(|v| v as f32 as f64));
            }
        }
        PointCloud::new(points).map(Some)
    }
}

#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub spectrum: SpectrumImage,
    pub paths: Vec<PropagationPath>,
    /// Set when no path reached the receiver; the spectrum is then all zero.
    pub unreachable: bool,
}

/// Ground-truth spectrum for a transmitter at `p_tx`.
pub fn synth_spectrum(spec: &SyntheticSceneSpec, p_tx: &Vec3, grid: Grid) -> Result<SynthOutput> {
    spec.validate()?;
    if !spec.bounds.contains(p_tx) {
        return Err(Error::invalid(format!(
            "transmitter ({}, {}, {}) outside the scene bounds",
            p_tx.x, p_tx.y, p_tx.z
        )));
    }
    let paths = spec.trace_paths(p_tx);
    match spec.element_phases(&paths)? {
        Some(phases) => Ok(SynthOutput {
            spectrum: spatial_spectrum(&phases, &spec.array, grid)?,
            paths,
            unreachable: false,
        }),
        None => Ok(SynthOutput {
            spectrum: SpectrumImage::zeros(grid),
            paths,
            unreachable: true,
        }),
    }
}
