//! Inference-ready models, held-out scoring and latency measurement.

use std::time::Instant;

use crate::dataset::Sample;
use crate::deform::DeformationNet;
use crate::error::{Error, Result};
use crate::geometry::{sigmoid, Vec3};
use crate::loss::{chamfer_distance, ssim, SsimOptions};
use crate::mask::validate_epsilon;
use crate::render::{render_pruned, PixelMode};
use crate::scene::Scene;
use crate::spectrum::{Grid, SpectrumImage};
use crate::train::checkpoint::Checkpoint;

/// A checkpoint with masked-out primitives physically removed. May be
/// empty when training masked out everything; it then predicts zeros,
/// exactly what hard-mask rendering gives.
#[derive(Clone, Debug)]
pub struct Model {
    pub scene: Scene,
    pub net: DeformationNet,
    pub grid: Grid,
    pub pixel_mode: PixelMode,
    pub spectrum_scale: f64,
    pub ssim: SsimOptions,
}

impl Model {
    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        validate_epsilon(c.config.epsilon)?;
        let keep: Vec<bool> = c
            .scene
            .primitives
            .iter()
            .map(|p| sigmoid(p.mask_score) >= c.config.epsilon)
            .collect();
        let mut scene = c.scene.clone();
        scene.retain_by(&keep);
        Ok(Self {
            scene,
            net: c.net.clone(),
            grid: Grid::FULL,
            pixel_mode: c.config.pixel_mode,
            spectrum_scale: c.spectrum_scale,
            ssim: SsimOptions {
                cyclic_azimuth: c.config.ssim_cyclic,
            },
        })
    }

    pub fn len(&self) -> usize {
        self.scene.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scene.is_empty()
    }

    /// Prediction on the unit scale the model was trained on.
    pub fn predict_normalized(&self, tx: &Vec3) -> Result<SpectrumImage> {
        if self.scene.is_empty() {
            if !tx.iter().all(|v| v.is_finite()) {
                return Err(Error::invalid("transmitter position is not finite"));
            }
            return Ok(SpectrumImage::zeros(self.grid));
        }
        render_pruned(&self.scene, tx, &self.net, self.grid, self.pixel_mode)
    }

    /// Prediction in the units of the training spectra.
    pub fn predict(&self, tx: &Vec3) -> Result<SpectrumImage> {
        Ok(self.predict_normalized(tx)?.scaled(self.spectrum_scale))
    }

    /// SSIM of the prediction against a measured spectrum.
    pub fn score(&self, tx: &Vec3, truth: &SpectrumImage) -> Result<f64> {
        let pred = self.predict_normalized(tx)?;
        let target = truth.scaled(1.0 / self.spectrum_scale);
        Ok(ssim(&pred, &target, self.ssim)?.0)
    }
}

/// Per-sample SSIM, in sample order.
pub fn evaluate_samples(model: &Model, samples: &[Sample]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::invalid("evaluation split is empty"));
    }
    samples.iter().map(|s| model.score(&s.tx, &s.spectrum)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatencyStats {
    pub median: f64,
    pub p90: f64,
    pub runs: usize,
}

/// Nearest-rank percentile of an unsorted sample.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

/// Wall-clock seconds per prediction over `runs` timed renders after
/// `warmup` untimed ones.
pub fn measure_latency(model: &Model, tx: &Vec3, warmup: usize, runs: usize) -> Result<LatencyStats> {
    if runs == 0 {
        return Err(Error::invalid("latency measurement needs at least one run"));
    }
    for _ in 0..warmup {
        std::hint::black_box(model.predict(tx)?);
    }
    let mut times = Vec::with_capacity(runs);
    for _ in 0..runs {
        let start = Instant::now();
        std::hint::black_box(model.predict(tx)?);
        times.push(start.elapsed().as_secs_f64());
    }
    Ok(LatencyStats {
        median: percentile(&times, 0.5),
        p90: percentile(&times, 0.9),
        runs,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub per_sample: Vec<f64>,
    pub mean_ssim: f64,
    /// Primitives left after removing masked-out ones.
    pub primitives: usize,
    pub checkpoint_bytes: usize,
    pub chamfer: Option<f64>,
}

pub fn evaluate(
    checkpoint: &Checkpoint,
    checkpoint_bytes: usize,
    samples: &[Sample],
    cloud: Option<&[Vec3]>,
) -> Result<EvalReport> {
    let model = Model::from_checkpoint(checkpoint)?;
    let per_sample = evaluate_samples(&model, samples)?;
    let mean_ssim = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    let chamfer = match cloud {
        Some(points) if !model.is_empty() => Some(chamfer_distance(&model.scene.centers(), points)?),
        _ => None,
    };
    Ok(EvalReport {
        per_sample,
        mean_ssim,
        primitives: model.len(),
        checkpoint_bytes,
        chamfer,
    })
}
