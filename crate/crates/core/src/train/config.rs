//! Training hyperparameters and their flat `key = value` text form.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::deform::Activation;
use crate::error::{Error, Result};
use crate::render::PixelMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitMode {
    /// One primitive per point of the scene's point cloud.
    Cloud,
    /// Uniform centers inside the scene bounds.
    Random,
}

impl InitMode {
    pub fn name(self) -> &'static str {
        match self {
            InitMode::Cloud => "cloud",
            InitMode::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "cloud" => Some(InitMode::Cloud),
            "random" => Some(InitMode::Random),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearningRates {
    /// Center rate at step 1, decayed exponentially to `mu_final` at the
    /// last iteration.
    pub mu: f64,
    pub mu_final: f64,
    pub log_scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub signal: f64,
    pub mask: f64,
    pub theta: f64,
}

impl LearningRates {
    pub fn mu_at(&self, t: u64, total: u64) -> f64 {
        let frac = if total == 0 { 1.0 } else { (t as f64 / total as f64).min(1.0) };
        self.mu * (self.mu_final / self.mu).powf(frac)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Total iterations `M`.
    pub iterations: u64,
    /// Last densification iteration `M_d`.
    pub densify_until: u64,
    /// Last pruning iteration `M_p`.
    pub prune_until: u64,
    /// Prune every `I_p` iterations inside `(M_d, M_p]`.
    pub prune_interval: u64,
    pub epsilon: f64,
    pub lambda: f64,
    /// D-SSIM weight `w`.
    pub ssim_weight: f64,
    pub ssim_cyclic: bool,
    pub lr: LearningRates,
    /// Mean screen-space center gradient (per degree) that triggers
    /// densification.
    pub densify_threshold: f64,
    pub densify_interval: u64,
    /// Largest axis (meters) below which a primitive is cloned, not split.
    pub split_scale: f64,
    pub split_factor: f64,
    pub max_primitives: usize,
    pub init: InitMode,
    /// Primitive count for random initialization.
    pub random_count: usize,
    pub embedding_levels: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub activation: Activation,
    pub pixel_mode: PixelMode,
    pub log_interval: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 200_000,
            densify_until: 20_000,
            prune_until: 40_000,
            prune_interval: 1000,
            epsilon: 0.01,
            lambda: 0.02,
            ssim_weight: 0.2,
            ssim_cyclic: false,
            lr: LearningRates {
                mu: 1.6e-4,
                mu_final: 1.6e-6,
                log_scale: 5e-3,
                rotation: 1e-3,
                opacity: 5e-2,
                signal: 2.5e-3,
                mask: 1e-2,
                theta: 1e-4,
            },
            densify_threshold: 2e-4,
            densify_interval: 100,
            split_scale: 0.1,
            split_factor: 1.6,
            max_primitives: 200_000,
            init: InitMode::Cloud,
            random_count: 1500,
            embedding_levels: 10,
            hidden_width: 64,
            hidden_layers: 2,
            activation: Activation::Silu,
            pixel_mode: PixelMode::Magnitude,
            log_interval: 100,
            seed: 0,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("cannot parse `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::invalid(format!("`{key}` expects true or false, got `{value}`"))),
    }
}

/// Every recognized key, in canonical order.
pub const KEYS: &[&str] = &[
    "iterations",
    "densify_until",
    "prune_until",
    "prune_interval",
    "epsilon",
    "lambda",
    "ssim_weight",
    "ssim_cyclic",
    "lr_mu",
    "lr_mu_final",
    "lr_log_scale",
    "lr_rotation",
    "lr_opacity",
    "lr_signal",
    "lr_mask",
    "lr_theta",
    "densify_threshold",
    "densify_interval",
    "split_scale",
    "split_factor",
    "max_primitives",
    "init",
    "random_count",
    "embedding_levels",
    "hidden_width",
    "hidden_layers",
    "activation",
    "pixel_mode",
    "log_interval",
    "seed",
];

impl TrainConfig {
    /// Reduced schedule sized for a desktop CPU run on the synthetic
    /// benchmark: 20k iterations with the phase boundaries scaled by 1/10.
    pub fn desk() -> Self {
        let mut c = Self {
            iterations: 20_000,
            densify_until: 2000,
            prune_until: 4000,
            prune_interval: 100,
            max_primitives: 20_000,
            ..Self::default()
        };
        // metre-scale scene and 10x fewer steps: faster centers, net and
        // masks than the full schedule
        c.lr.mu = 3.2e-3;
        c.lr.mu_final = 1.6e-5;
        c.lr.theta = 3e-3;
        c.lr.mask = 2e-2;
        // smooth dependence on the transmitter; 10 levels overfit the
        // training poses
        c.embedding_levels = 3;
        c
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid(msg));
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if self.densify_until > self.prune_until || self.prune_until > self.iterations {
            return bad(format!(
                "need densify_until <= prune_until <= iterations, got {} / {} / {}",
                self.densify_until, self.prune_until, self.iterations
            ));
        }
        if self.prune_interval == 0 || self.densify_interval == 0 || self.log_interval == 0 {
            return bad("intervals must be at least 1".into());
        }
        crate::mask::validate_epsilon(self.epsilon)?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda {} must be finite and >= 0", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.ssim_weight) {
            return bad(format!("ssim_weight {} outside [0, 1]", self.ssim_weight));
        }
        let lr = &self.lr;
        for (name, v) in [
            ("lr_mu", lr.mu),
            ("lr_mu_final", lr.mu_final),
            ("lr_log_scale", lr.log_scale),
            ("lr_rotation", lr.rotation),
            ("lr_opacity", lr.opacity),
            ("lr_signal", lr.signal),
            ("lr_mask", lr.mask),
            ("lr_theta", lr.theta),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} {v} must be finite and >= 0"));
            }
        }
        if !(lr.mu > 0.0 && lr.mu_final > 0.0) {
            return bad("center learning rates must be positive for the exponential decay".into());
        }
        if !(self.densify_threshold >= 0.0) || !(self.split_scale > 0.0) || !(self.split_factor > 1.0) {
            return bad("densify_threshold >= 0, split_scale > 0 and split_factor > 1 required".into());
        }
        if self.max_primitives == 0 || self.random_count < 2 {
            return bad("max_primitives must be positive and random_count at least 2".into());
        }
        if self.hidden_width == 0 || self.hidden_layers == 0 {
            return bad("deformation net needs at least one nonempty hidden layer".into());
        }
        Ok(())
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "iterations" => self.iterations = parse_value(key, v)?,
            "densify_until" => self.densify_until = parse_value(key, v)?,
            "prune_until" => self.prune_until = parse_value(key, v)?,
            "prune_interval" => self.prune_interval = parse_value(key, v)?,
            "epsilon" => self.epsilon = parse_value(key, v)?,
            "lambda" => self.lambda = parse_value(key, v)?,
            "ssim_weight" => self.ssim_weight = parse_value(key, v)?,
            "ssim_cyclic" => self.ssim_cyclic = parse_bool(key, v)?,
            "lr_mu" => self.lr.mu = parse_value(key, v)?,
            "lr_mu_final" => self.lr.mu_final = parse_value(key, v)?,
            "lr_log_scale" => self.lr.log_scale = parse_value(key, v)?,
            "lr_rotation" => self.lr.rotation = parse_value(key, v)?,
            "lr_opacity" => self.lr.opacity = parse_value(key, v)?,
            "lr_signal" => self.lr.signal = parse_value(key, v)?,
            "lr_mask" => self.lr.mask = parse_value(key, v)?,
            "lr_theta" => self.lr.theta = parse_value(key, v)?,
            "densify_threshold" => self.densify_threshold = parse_value(key, v)?,
            "densify_interval" => self.densify_interval = parse_value(key, v)?,
            "split_scale" => self.split_scale = parse_value(key, v)?,
            "split_factor" => self.split_factor = parse_value(key, v)?,
            "max_primitives" => self.max_primitives = parse_value(key, v)?,
            "init" => {
                self.init = InitMode::parse(v).ok_or_else(|| Error::invalid(format!("unknown init mode `{v}`")))?
            }
            "random_count" => self.random_count = parse_value(key, v)?,
            "embedding_levels" => self.embedding_levels = parse_value(key, v)?,
            "hidden_width" => self.hidden_width = parse_value(key, v)?,
            "hidden_layers" => self.hidden_layers = parse_value(key, v)?,
            "activation" => {
                self.activation =
                    Activation::parse(v).ok_or_else(|| Error::invalid(format!("unknown activation `{v}`")))?
            }
            "pixel_mode" => {
                self.pixel_mode =
                    PixelMode::parse(v).ok_or_else(|| Error::invalid(format!("unknown pixel mode `{v}`")))?
            }
            "log_interval" => self.log_interval = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            other => return Err(Error::invalid(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies every assignment in `text` on top of `self`. Blank lines and
    /// `#` comments are ignored; unknown keys are errors.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("line {}: expected `key = value`", lineno + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::invalid(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    /// Parses a full config on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    fn value_of(&self, key: &str) -> String {
        match key {
            "iterations" => self.iterations.to_string(),
            "densify_until" => self.densify_until.to_string(),
            "prune_until" => self.prune_until.to_string(),
            "prune_interval" => self.prune_interval.to_string(),
            "epsilon" => self.epsilon.to_string(),
            "lambda" => self.lambda.to_string(),
            "ssim_weight" => self.ssim_weight.to_string(),
            "ssim_cyclic" => self.ssim_cyclic.to_string(),
            "lr_mu" => self.lr.mu.to_string(),
            "lr_mu_final" => self.lr.mu_final.to_string(),
            "lr_log_scale" => self.lr.log_scale.to_string(),
            "lr_rotation" => self.lr.rotation.to_string(),
            "lr_opacity" => self.lr.opacity.to_string(),
            "lr_signal" => self.lr.signal.to_string(),
            "lr_mask" => self.lr.mask.to_string(),
            "lr_theta" => self.lr.theta.to_string(),
            "densify_threshold" => self.densify_threshold.to_string(),
            "densify_interval" => self.densify_interval.to_string(),
            "split_scale" => self.split_scale.to_string(),
            "split_factor" => self.split_factor.to_string(),
            "max_primitives" => self.max_primitives.to_string(),
            "init" => self.init.name().to_string(),
            "random_count" => self.random_count.to_string(),
            "embedding_levels" => self.embedding_levels.to_string(),
            "hidden_width" => self.hidden_width.to_string(),
            "hidden_layers" => self.hidden_layers.to_string(),
            "activation" => self.activation.name().to_string(),
            "pixel_mode" => self.pixel_mode.name().to_string(),
            "log_interval" => self.log_interval.to_string(),
            "seed" => self.seed.to_string(),
            _ => unreachable!("key list and accessors out of sync"),
        }
    }

    /// Canonical text form; parsing it reproduces `self` exactly (floats
    /// print in shortest round-trip form).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in KEYS {
            writeln!(s, "{key} = {}", self.value_of(key)).unwrap();
        }
        s
    }

    /// SHA-256 of the canonical text.
    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.to_text().as_bytes()).into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_are_valid() {
        TrainConfig::default().validate().unwrap();
        TrainConfig::desk().validate().unwrap();
        let c = TrainConfig::default();
        assert_eq!((c.iterations, c.densify_until, c.prune_until, c.prune_interval), (200_000, 20_000, 40_000, 1000));
        assert_eq!((c.epsilon, c.ssim_weight), (0.01, 0.2));
    }

    #[test]
    fn text_round_trip() {
        let mut c = TrainConfig::desk();
        c.lambda = 0.03;
        c.lr.theta = 1.234_567_890_123e-5;
        c.init = InitMode::Random;
        c.pixel_mode = PixelMode::Power;
        c.ssim_cyclic = true;
        let back = TrainConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_ne!(TrainConfig::default().hash(), c.hash());
    }

    #[test]
    fn parse_rejects_unknown_and_malformed() {
        assert!(TrainConfig::parse("bogus = 1").is_err());
        assert!(TrainConfig::parse("lambda").is_err());
        assert!(TrainConfig::parse("lambda = abc").is_err());
        assert!(TrainConfig::parse("init = sphere").is_err());
        let c = TrainConfig::parse("# comment\n\n lambda = 0.04 # trailing\n").unwrap();
        assert_eq!(c.lambda, 0.04);
    }

    #[test]
    fn validation_examples() {
        let mut c = TrainConfig::default();
        c.densify_until = 0;
        c.prune_until = 0;
        c.iterations = 10;
        c.validate().unwrap();
        c.densify_until = 5;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.prune_interval = 0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.epsilon = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn center_rate_decays_geometrically() {
        let lr = TrainConfig::default().lr;
        assert_eq!(lr.mu_at(0, 100), lr.mu);
        assert!((lr.mu_at(100, 100) - lr.mu_final).abs() < 1e-18);
        let mid = lr.mu_at(50, 100);
        assert!((mid - (lr.mu * lr.mu_final).sqrt()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn float_fields_round_trip(l in 0.0f64..10.0, e in 1e-6f64..0.999, w in 0.0f64..1.0) {
            let mut c = TrainConfig::default();
            c.lambda = l;
            c.epsilon = e;
            c.ssim_weight = w;
            let back = TrainConfig::parse(&c.to_text()).unwrap();
            prop_assert_eq!(back, c);
        }
    }
}
