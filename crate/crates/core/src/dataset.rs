//! On-disk dataset of (transmitter position, spectrum) pairs.
//!
//! Layout: `meta.json`, `train/NNNNN.spect`, `test/NNNNN.spect` and an
//! optional `cloud.txt` with the scene point cloud.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Aabb, ReceiverFrame, Vec3};
use crate::oracle::{synth_spectrum, ArraySpec, SyntheticSceneSpec};
use crate::scene::PointCloud;
use crate::spectrum::{Grid, SpectrumImage};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "meta.json";
pub const CLOUD_FILE: &str = "cloud.txt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub array: ArraySpec,
    pub receiver: ReceiverFrame,
    pub bounds: Aabb,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    /// Largest training-spectrum value; models work in units of this.
    pub spectrum_scale: f64,
    pub has_cloud: bool,
    /// Sample file stems (e.g. `train/00017`) that no path reached.
    #[serde(default)]
    pub unreachable: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub tx: Vec3,
    pub spectrum: SpectrumImage,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: Manifest,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub cloud: Option<PointCloud>,
}

fn sample_path(dir: &Path, split: &str, i: usize) -> PathBuf {
    dir.join(split).join(format!("{i:05}.spect"))
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::format(
                &path,
                format!("unsupported dataset format version {}", m.format_version),
            ));
        }
        if !(m.spectrum_scale > 0.0) {
            return Err(Error::format(&path, "spectrum_scale must be positive"));
        }
        Ok(m)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = Manifest::read(dir)?;
        let read_split = |split: &str, n: usize| -> Result<Vec<Sample>> {
            (0..n)
                .map(|i| {
                    let (tx, spectrum) = SpectrumImage::read_spect(&sample_path(dir, split, i))?;
                    Ok(Sample { tx, spectrum })
                })
                .collect()
        };
        let train = read_split("train", manifest.n_train)?;
        let test = read_split("test", manifest.n_test)?;
        let cloud = if manifest.has_cloud {
            Some(PointCloud::read(&dir.join(CLOUD_FILE))?)
        } else {
            None
        };
        Ok(Self {
            manifest,
            train,
            test,
            cloud,
        })
    }
}

/// Synthesizes `n` samples from `spec`, shuffles them with the scene seed and
/// writes the first `round(split_ratio * n)` as training data.
pub fn generate_dataset(spec: &SyntheticSceneSpec, n: usize, split_ratio: f64, dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::invalid("sample count must be positive"));
    }
    if !(0.0..=1.0).contains(&split_ratio) {
        return Err(Error::invalid(format!("split ratio {split_ratio} outside [0, 1]")));
    }
    let n_train = (split_ratio * n as f64).round() as usize;
    if n_train == 0 {
        return Err(Error::invalid("split leaves no training samples"));
    }
    if dir.join(MANIFEST_FILE).exists() {
        return Err(Error::invalid(format!(
            "{} already holds a dataset",
            dir.display()
        )));
    }
    for split in ["train", "test"] {
        let d = dir.join(split);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }

    let mut positions = spec.sample_tx_positions(n);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x73_706c_6974);
    positions.shuffle(&mut rng);

    let mut spectrum_scale: f64 = 0.0;
    let mut unreachable = Vec::new();
    for (i, tx) in positions.iter().enumerate() {
        let (split, idx) = if i < n_train { ("train", i) } else { ("test", i - n_train) };
        let out = synth_spectrum(spec, tx, Grid::FULL)?;
        if out.unreachable {
            log::warn!("no propagation path for sample {split}/{idx:05}");
            unreachable.push(format!("{split}/{idx:05}"));
        }
        if i < n_train {
            spectrum_scale = spectrum_scale.max(out.spectrum.max());
        }
        out.spectrum.write_spect(&sample_path(dir, split, idx), tx)?;
    }
    if spectrum_scale <= 0.0 {
        spectrum_scale = 1.0;
    }

    let cloud = spec.sample_point_cloud()?;
    if let Some(c) = &cloud {
        c.write(&dir.join(CLOUD_FILE))?;
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        array: spec.array,
        receiver: spec.receiver.clone(),
        bounds: spec.bounds,
        n_train,
        n_test: n - n_train,
        seed: spec.seed,
        spectrum_scale,
        has_cloud: cloud.is_some(),
        unreachable,
    };
    manifest.write(dir)?;
    Ok(manifest)
}
