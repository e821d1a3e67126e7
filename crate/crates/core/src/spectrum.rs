//! Spatial-spectrum images and their on-disk encodings.
//!
//! An image is indexed `[azimuth][elevation]`; row `a` holds azimuth bin `a`
//! and column `b` holds elevation bin `b`. The full-resolution grid is 360x90
//! at 1 degree spacing, and pixel `(a, b)` samples the direction
//! `(a * 360 / n_az, b * 90 / n_el)` degrees.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Vec3;

pub const AZIMUTH_BINS: usize = 360;
pub const ELEVATION_BINS: usize = 90;

const SPECT_MAGIC: &[u8; 4] = b"WRFS";
const SPECT_VERSION: u16 = 1;
const SPECT_HEADER_LEN: usize = 4 + 2 + 3 * 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Grid {
    pub n_az: usize,
    pub n_el: usize,
}

impl Default for Grid {
    fn default() -> Self {
        Self::FULL
    }
}

impl Grid {
    pub const FULL: Grid = Grid {
        n_az: AZIMUTH_BINS,
        n_el: ELEVATION_BINS,
    };

    pub fn new(n_az: usize, n_el: usize) -> Result<Self> {
        if n_az == 0 || n_el == 0 {
            return Err(Error::invalid(format!("empty grid {n_az}x{n_el}")));
        }
        Ok(Self { n_az, n_el })
    }

    pub fn len(&self) -> usize {
        self.n_az * self.n_el
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn az_step_deg(&self) -> f64 {
        360.0 / self.n_az as f64
    }

    pub fn el_step_deg(&self) -> f64 {
        90.0 / self.n_el as f64
    }

    /// Pixel center in degrees.
    pub fn center_deg(&self, a: usize, b: usize) -> (f64, f64) {
        (a as f64 * self.az_step_deg(), b as f64 * self.el_step_deg())
    }

    #[inline]
    pub fn index(&self, a: usize, b: usize) -> usize {
        a * self.n_el + b
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumImage {
    grid: Grid,
    values: Vec<f64>,
}

impl SpectrumImage {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    /// Wraps row-major values; rejects wrong lengths and negative or
    /// non-finite entries.
    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid(format!(
                "expected {} values for a {}x{} grid, got {}",
                grid.len(),
                grid.n_az,
                grid.n_el,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::invalid(format!("spectrum value {v} is not a finite nonnegative number")));
        }
        Ok(Self { grid, values })
    }

    pub(crate) fn from_values_unchecked(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.values[self.grid.index(a, b)]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Pixel `(a, b)` holding the largest value; first one wins on ties.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        (best / self.grid.n_el, best % self.grid.n_el)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn check_same_grid(&self, other: &SpectrumImage) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::invalid(format!(
                "grid mismatch: {}x{} vs {}x{}",
                self.grid.n_az, self.grid.n_el, other.grid.n_az, other.grid.n_el
            )));
        }
        Ok(())
    }

    /// `.spect` encoding: `WRFS`, version u16, tx position 3xf32, then the
    /// 360x90 values as f32, all little-endian.
    pub fn encode_spect(&self, tx: &Vec3) -> Result<Vec<u8>> {
        if self.grid != Grid::FULL {
            return Err(Error::invalid(".spect files hold full 360x90 spectra only"));
        }
        let mut out = Vec::with_capacity(SPECT_HEADER_LEN + 4 * self.values.len());
        out.extend_from_slice(SPECT_MAGIC);
        out.extend_from_slice(&SPECT_VERSION.to_le_bytes());
        for k in 0..3 {
            out.extend_from_slice(&(tx[k] as f32).to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        Ok(out)
    }

    pub fn decode_spect(bytes: &[u8], path: &Path) -> Result<(Vec3, SpectrumImage)> {
        let grid = Grid::FULL;
        let expected = SPECT_HEADER_LEN + 4 * grid.len();
        if bytes.len() != expected {
            return Err(Error::format(
                path,
                format!("expected {expected} bytes, found {}", bytes.len()),
            ));
        }
        if &bytes[0..4] != SPECT_MAGIC {
            return Err(Error::format(path, "bad magic, not a .spect file"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != SPECT_VERSION {
            return Err(Error::format(path, format!("unsupported version {version}")));
        }
        let f = |off: usize| f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as f64;
        let tx = Vec3::new(f(6), f(10), f(14));
        let values: Vec<f64> = (0..grid.len()).map(|i| f(SPECT_HEADER_LEN + 4 * i)).collect();
        let image = SpectrumImage::from_values(grid, values)
            .map_err(|e| Error::format(path, e.to_string()))?;
        Ok((tx, image))
    }

    pub fn write_spect(&self, path: &Path, tx: &Vec3) -> Result<()> {
        fs::write(path, self.encode_spect(tx)?).map_err(|e| Error::io(path, e))
    }

    pub fn read_spect(path: &Path) -> Result<(Vec3, SpectrumImage)> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode_spect(&bytes, path)
    }

    /// Binary 8-bit PGM, azimuth across and elevation down, min-max
    /// normalized per image.
    pub fn encode_pgm(&self) -> Vec<u8> {
        let (w, h) = (self.grid.n_az, self.grid.n_el);
        let lo = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
        out.reserve(w * h);
        for b in 0..h {
            for a in 0..w {
                let v = self.get(a, b);
                let level = if span > 0.0 {
                    ((v - lo) / span * 255.0).round()
                } else {
                    0.0
                };
                out.push(level.clamp(0.0, 255.0) as u8);
            }
        }
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode_pgm()).map_err(|e| Error::io(path, e))
    }
}
