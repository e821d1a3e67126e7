//! The three-phase training loop: densify, then prune, then finetune with
//! frozen masks.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::Dataset;
use crate::deform::{DeformationNet, InputNorm};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::loss::{render_loss, total_loss, LossBreakdown, SsimOptions};
use crate::mask::prune;
use crate::render::{render, render_backward, MaskMode, RenderOptions};
use crate::scene::{init_from_point_cloud, init_random, Scene};
use crate::spectrum::SpectrumImage;
use crate::train::checkpoint::{Checkpoint, TrainState};
use crate::train::config::{InitMode, TrainConfig};
use crate::train::densify::{densify, DensifyParams, GradStats};
use crate::train::eval::{evaluate_samples, Model};
use crate::train::optim::{canonicalize, OptimizerState, StepRates};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Densify,
    Prune,
    Finetune,
}

impl TrainConfig {
    pub fn phase(&self, t: u64) -> Phase {
        if t <= self.densify_until {
            Phase::Densify
        } else if t <= self.prune_until {
            Phase::Prune
        } else {
            Phase::Finetune
        }
    }
}

/// Interval means of the loss terms, logged every `log_interval` steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRecord {
    pub iteration: u64,
    pub primitives: usize,
    pub loss: LossBreakdown,
}

impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let l = &self.loss;
        write!(
            f,
            "{} {} {:.6e} {:.6e} {:.6e} {:.6e}",
            self.iteration, self.primitives, l.l1, l.d_ssim, l.mask_reg, l.total
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepReport {
    pub iteration: u64,
    pub loss: LossBreakdown,
    pub primitives: usize,
    pub densified: usize,
    pub pruned: usize,
}

pub struct Trainer {
    config: TrainConfig,
    samples: Vec<(Vec3, SpectrumImage)>,
    spectrum_scale: f64,
    scene: Scene,
    net: DeformationNet,
    optimizer: OptimizerState,
    grad_stats: GradStats,
    iteration: u64,
    epoch_order: Option<(u64, Vec<usize>)>,
    interval_sum: LossBreakdown,
    interval_len: u64,
}

fn normalized(d: &Dataset) -> Result<Vec<(Vec3, SpectrumImage)>> {
    if d.train.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    let scale = d.manifest.spectrum_scale;
    if !(scale > 0.0) {
        return Err(Error::invalid(format!("spectrum scale {scale} must be positive")));
    }
    Ok(d.train.iter().map(|s| (s.tx, s.spectrum.scaled(1.0 / scale))).collect())
}

fn add(a: &mut LossBreakdown, b: &LossBreakdown) {
    a.l1 += b.l1;
    a.d_ssim += b.d_ssim;
    a.render_loss += b.render_loss;
    a.mask_reg += b.mask_reg;
    a.total += b.total;
}

impl Trainer {
    /// Initializes primitives and the deformation net from the dataset.
    pub fn new(config: TrainConfig, dataset: &Dataset) -> Result<Self> {
        config.validate()?;
        let samples = normalized(dataset)?;
        let m = &dataset.manifest;
        let receiver = m.receiver.clone();
        let mut scene = match config.init {
            InitMode::Cloud => {
                let cloud = dataset
                    .cloud
                    .as_ref()
                    .ok_or_else(|| Error::invalid("cloud init requested but the dataset has no point cloud"))?;
                init_from_point_cloud(cloud, receiver)
            }
            InitMode::Random => init_random(config.random_count, &m.bounds, config.seed, receiver)?,
        };
        canonicalize(&mut scene);
        let norm = InputNorm::from_aabb(&m.bounds);
        let mut net = DeformationNet::new(
            config.embedding_levels,
            config.hidden_width,
            config.hidden_layers,
            config.activation,
            norm,
            norm,
            config.seed ^ 0x6e_6574,
        )?;
        net.theta_mut().iter_mut().for_each(|w| *w = *w as f32 as f64);
        let optimizer = OptimizerState::new(scene.len(), net.theta().len());
        let grad_stats = GradStats::new(scene.len());
        Ok(Self {
            config,
            samples,
            spectrum_scale: m.spectrum_scale,
            scene,
            net,
            optimizer,
            grad_stats,
            iteration: 0,
            epoch_order: None,
            interval_sum: LossBreakdown::default(),
            interval_len: 0,
        })
    }

    /// Continues from a checkpoint that carries optimizer state.
    pub fn resume(checkpoint: Checkpoint, dataset: &Dataset) -> Result<Self> {
        checkpoint.config.validate()?;
        let state = checkpoint
            .state
            .ok_or_else(|| Error::invalid("checkpoint has no optimizer state to resume from"))?;
        if state.optimizer.rows() != checkpoint.scene.len() || state.grad_stats.len() != checkpoint.scene.len() {
            return Err(Error::invalid("checkpoint optimizer state does not match its primitives"));
        }
        Ok(Self {
            config: checkpoint.config,
            samples: normalized(dataset)?,
            spectrum_scale: checkpoint.spectrum_scale,
            scene: checkpoint.scene,
            net: checkpoint.net,
            optimizer: state.optimizer,
            grad_stats: state.grad_stats,
            iteration: checkpoint.iteration,
            epoch_order: None,
            interval_sum: LossBreakdown::default(),
            interval_len: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn net(&self) -> &DeformationNet {
        &self.net
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.config.iterations
    }

    /// Extends the schedule, e.g. to continue a finished run.
    pub fn set_iterations(&mut self, iterations: u64) -> Result<()> {
        let mut c = self.config.clone();
        c.iterations = iterations;
        c.validate()?;
        self.config = c;
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            iteration: self.iteration,
            spectrum_scale: self.spectrum_scale,
            scene: self.scene.clone(),
            net: self.net.clone(),
            state: Some(TrainState {
                optimizer: self.optimizer.clone(),
                grad_stats: self.grad_stats.clone(),
            }),
        }
    }

    /// Sample index for 1-based step `t`: one seeded shuffle per epoch.
    fn sample_index(&mut self, t: u64) -> usize {
        let n = self.samples.len() as u64;
        let epoch = (t - 1) / n;
        if self.epoch_order.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut order: Vec<usize> = (0..self.samples.len()).collect();
            let seed = self.config.seed ^ epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15);
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            self.epoch_order = Some((epoch, order));
        }
        self.epoch_order.as_ref().unwrap().1[((t - 1) % n) as usize]
    }

    fn non_finite(&self, t: u64, tx: &Vec3, what: &str, loss: &LossBreakdown) -> Error {
        Error::NonFinite {
            iteration: t,
            detail: format!(
                "{what}; tx = ({}, {}, {}), N = {}, l1 = {}, d_ssim = {}, mask_reg = {}, total = {}",
                tx.x,
                tx.y,
                tx.z,
                self.scene.len(),
                loss.l1,
                loss.d_ssim,
                loss.mask_reg,
                loss.total
            ),
        }
    }

    /// Runs one iteration; returns its report and, on logging steps, the
    /// interval record.
    pub fn step(&mut self) -> Result<(StepReport, Option<LogRecord>)> {
        if self.is_done() {
            return Err(Error::invalid("training schedule already complete"));
        }
        let t = self.iteration + 1;
        let cfg = &self.config;
        let phase = cfg.phase(t);
        let idx = self.sample_index(t);
        let cfg = &self.config;
        let (tx, target) = &self.samples[idx];
        let options = RenderOptions {
            grid: target.grid(),
            epsilon: cfg.epsilon,
            mask_mode: MaskMode::Ste,
            pixel_mode: cfg.pixel_mode,
        };
        let ssim_opts = SsimOptions {
            cyclic_azimuth: cfg.ssim_cyclic,
        };
        let (image, graph) = render(&self.scene, tx, &self.net, &options)?;
        let (render_part, d_pixels) = render_loss(&image, target, cfg.ssim_weight, ssim_opts)?;
        let masks_live = phase != Phase::Finetune;
        let lambda = if masks_live { cfg.lambda } else { 0.0 };
        let scores: Vec<f64> = self.scene.primitives.iter().map(|p| p.mask_score).collect();
        let (loss, reg_grad) = total_loss(render_part, &scores, lambda)?;
        let tx = *tx;
        if !loss.total.is_finite() {
            return Err(self.non_finite(t, &tx, "loss", &loss));
        }
        let mut grads = render_backward(&graph, &self.scene, &self.net, &d_pixels)?;
        drop(graph);
        if masks_live {
            for (g, r) in grads.primitives.iter_mut().zip(&reg_grad) {
                g.mask_score += r;
            }
        }
        let finite = grads.theta.iter().all(|v| v.is_finite())
            && grads.primitives.iter().all(|g| {
                g.mu.iter()
                    .chain(g.log_scale.iter())
                    .chain(g.rotation.iter())
                    .chain([g.opacity_logit, g.signal.re, g.signal.im, g.mask_score].iter())
                    .all(|v| v.is_finite())
            });
        if !finite {
            return Err(self.non_finite(t, &tx, "gradient", &loss));
        }

        let cfg = &self.config;
        let lr = &cfg.lr;
        let rates = StepRates {
            mu: lr.mu_at(t, cfg.iterations),
            log_scale: lr.log_scale,
            rotation: lr.rotation,
            opacity: lr.opacity,
            signal: lr.signal,
            mask: masks_live.then_some(lr.mask),
            theta: lr.theta,
        };
        self.optimizer
            .apply(&mut self.scene, &grads.primitives, self.net.theta_mut(), &grads.theta, &rates)?;

        let mut report = StepReport {
            iteration: t,
            loss,
            ..Default::default()
        };
        match phase {
            Phase::Densify => {
                self.grad_stats.record(&grads.screen, &grads.visible);
                if t % cfg.densify_interval == 0 {
                    let params = DensifyParams {
                        threshold: cfg.densify_threshold,
                        split_scale: cfg.split_scale,
                        split_factor: cfg.split_factor,
                        max_primitives: cfg.max_primitives,
                    };
                    let seed = cfg.seed ^ t.wrapping_mul(0x5851_f42d_4c95_7f2d);
                    let out = densify(&mut self.scene, &self.grad_stats, &params, seed);
                    self.optimizer.push_zero_rows(out.added());
                    for &row in &out.replaced {
                        self.optimizer.zero_row(row);
                    }
                    canonicalize(&mut self.scene);
                    self.grad_stats.reset(self.scene.len());
                    report.densified = out.added();
                }
            }
            Phase::Prune if t % cfg.prune_interval == 0 => match prune(&mut self.scene, cfg.epsilon) {
                Ok(out) => {
                    if out.removed > 0 {
                        self.optimizer.retain_rows(&out.keep);
                        self.grad_stats.retain(&out.keep);
                    }
                    report.pruned = out.removed;
                }
                Err(Error::InvalidArgument(msg)) => log::warn!("iteration {t}: {msg}; continuing unpruned"),
                Err(e) => return Err(e),
            },
            _ => {}
        }
        self.iteration = t;
        report.primitives = self.scene.len();

        add(&mut self.interval_sum, &loss);
        self.interval_len += 1;
        let record = if t % self.config.log_interval == 0 || t == self.config.iterations {
            let k = self.interval_len as f64;
            let s = &self.interval_sum;
            let rec = LogRecord {
                iteration: t,
                primitives: self.scene.len(),
                loss: LossBreakdown {
                    l1: s.l1 / k,
                    d_ssim: s.d_ssim / k,
                    render_loss: s.render_loss / k,
                    mask_reg: s.mask_reg / k,
                    total: s.total / k,
                },
            };
            self.interval_sum = LossBreakdown::default();
            self.interval_len = 0;
            Some(rec)
        } else {
            None
        };
        Ok((report, record))
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRecord>,
    /// Primitive count after every iteration.
    pub trace: Vec<usize>,
    /// Mean SSIM of the final model on the test split, when there is one.
    pub test_ssim: Option<f64>,
}

/// Trains to completion, calling `on_log` for every logged interval.
pub fn run(trainer: &mut Trainer, mut on_log: impl FnMut(&LogRecord)) -> Result<TrainOutcome> {
    let mut log = Vec::new();
    let mut trace = Vec::with_capacity(trainer.config.iterations as usize);
    while !trainer.is_done() {
        let (report, record) = trainer.step()?;
        trace.push(report.primitives);
        if let Some(r) = record {
            on_log(&r);
            log.push(r);
        }
    }
    Ok(TrainOutcome {
        checkpoint: trainer.checkpoint(),
        log,
        trace,
        test_ssim: None,
    })
}

/// Trains from scratch and scores the final model on the test split.
pub fn train(config: TrainConfig, dataset: &Dataset, on_log: impl FnMut(&LogRecord)) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config, dataset)?;
    let mut out = run(&mut trainer, on_log)?;
    if !dataset.test.is_empty() {
        let model = Model::from_checkpoint(&out.checkpoint)?;
        let scores = evaluate_samples(&model, &dataset.test)?;
        out.test_ssim = Some(scores.iter().sum::<f64>() / scores.len() as f64);
    }
    Ok(out)
}
