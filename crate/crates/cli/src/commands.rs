use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use radiosplat::dataset::{generate_dataset, Dataset};
use radiosplat::geometry::Vec3;
use radiosplat::oracle::SyntheticSceneSpec;
use radiosplat::train::eval::percentile;
use radiosplat::train::{self, evaluate, measure_latency, Checkpoint, InitMode, Model, TrainConfig, Trainer};
use radiosplat::{Error, Result};

use crate::{BenchArgs, EvalArgs, Format, GenSynthArgs, Init, PredictArgs, Preset, Split, TrainArgs};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn gen_synth(a: GenSynthArgs) -> Result<()> {
    log::info!("gen-synth: {a:?}");
    let mut spec = match &a.scene {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::InvalidArgument(format!("{}: bad scene description: {e}", path.display())))?
        }
        None => SyntheticSceneSpec::benchmark(),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    spec.validate()?;
    if let Some(path) = &a.write_scene {
        let text = serde_json::to_string_pretty(&spec).expect("scene serializes");
        fs::write(path, text).map_err(io_err(path))?;
    }
    let m = generate_dataset(&spec, a.tx_count, a.split, &a.out)?;
    println!(
        "wrote {} train / {} test samples to {} (cloud: {}, unreachable: {})",
        m.n_train,
        m.n_test,
        a.out.display(),
        m.has_cloud,
        m.unreachable.len()
    );
    Ok(())
}

fn resolve_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut c = match a.preset {
        Preset::Full => TrainConfig::default(),
        Preset::Desk => TrainConfig::desk(),
    };
    if let Some(path) = &a.config {
        c.apply_file(path)?;
    }
    if let Some(v) = a.lambda {
        c.lambda = v;
    }
    if let Some(v) = a.epsilon {
        c.epsilon = v;
    }
    if let Some(v) = a.m {
        c.iterations = v;
    }
    if let Some(v) = a.md {
        c.densify_until = v;
    }
    if let Some(v) = a.mp {
        c.prune_until = v;
    }
    if let Some(v) = a.ip {
        c.prune_interval = v;
    }
    if let Some(v) = a.init {
        c.init = match v {
            Init::Cloud => InitMode::Cloud,
            Init::Random => InitMode::Random,
        };
    }
    if let Some(v) = a.seed {
        c.seed = v;
    }
    for kv in &a.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        c.set(k, v)?;
    }
    c.validate()?;
    Ok(c)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let dataset = Dataset::load(&a.data)?;
    let mut trainer = match &a.resume {
        Some(path) => {
            let mut t = Trainer::resume(Checkpoint::load(path)?, &dataset)?;
            if let Some(m) = a.m {
                t.set_iterations(m)?;
            }
            t
        }
        None => Trainer::new(resolve_config(&a)?, &dataset)?,
    };
    log::info!("resolved config:\n{}", trainer.config().to_text());

    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".log");
        PathBuf::from(p)
    });
    let mut log_file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(io_err(&log_path))?;
    writeln!(log_file, "# t N l1 d_ssim mask_reg total").map_err(io_err(&log_path))?;
    let mut write_error = None;
    let start = Instant::now();
    let outcome = train::run(&mut trainer, |r| {
        log::info!("{r}  ({:.0} s)", start.elapsed().as_secs_f64());
        if write_error.is_none() {
            if let Err(e) = writeln!(log_file, "{r}") {
                write_error = Some(e);
            }
        }
    })?;
    if let Some(e) = write_error {
        return Err(io_err(&log_path)(e));
    }
    outcome.checkpoint.save(&a.out, !a.no_state)?;

    let model = Model::from_checkpoint(&outcome.checkpoint)?;
    let stored = outcome.checkpoint.scene.len();
    if dataset.test.is_empty() {
        println!("N = {stored} ({} unmasked), no test split", model.len());
    } else {
        let scores = train::eval::evaluate_samples(&model, &dataset.test)?;
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        println!("N = {stored} ({} unmasked), mean test SSIM = {mean:.6}", model.len());
    }
    Ok(())
}

pub fn predict(a: PredictArgs) -> Result<()> {
    log::info!("predict: {a:?}");
    let model = Model::from_checkpoint(&Checkpoint::load(&a.checkpoint)?)?;
    let start = Instant::now();
    let image = model.predict(&a.tx)?;
    let elapsed = start.elapsed();
    match a.format {
        Format::Spect => image.write_spect(&a.out, &a.tx)?,
        Format::Pgm => image.write_pgm(&a.out)?,
    }
    println!("rendered {} primitives in {:.3} ms", model.len(), elapsed.as_secs_f64() * 1e3);
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    log::info!("eval: {a:?}");
    let checkpoint = Checkpoint::load(&a.checkpoint)?;
    let bytes = fs::metadata(&a.checkpoint).map_err(io_err(&a.checkpoint))?.len() as usize;
    let dataset = Dataset::load(&a.data)?;
    let samples = match a.split {
        Split::Train => &dataset.train,
        Split::Test => &dataset.test,
    };
    let cloud = dataset.cloud.as_ref().map(|c| c.points());
    let report = evaluate(&checkpoint, bytes, samples, cloud)?;
    println!("# sample x y z ssim");
    for (i, (s, v)) in samples.iter().zip(&report.per_sample).enumerate() {
        println!("{i} {} {} {} {v:.6}", s.tx.x, s.tx.y, s.tx.z);
    }
    println!("mean_ssim {:.6}", report.mean_ssim);
    println!("p10_ssim {:.6}", percentile(&report.per_sample, 0.1));
    println!("primitives {}", report.primitives);
    println!("checkpoint_bytes {}", report.checkpoint_bytes);
    if let Some(c) = report.chamfer {
        println!("chamfer {c:.6e}");
    }
    if a.runs > 0 {
        let model = Model::from_checkpoint(&checkpoint)?;
        let lat = measure_latency(&model, &samples[0].tx, 3, a.runs)?;
        println!("latency_median_ms {:.3}", lat.median * 1e3);
        println!("latency_p90_ms {:.3}", lat.p90 * 1e3);
    }
    Ok(())
}

/// 1.5 m along the boresight, offset off-axis so the spectrum is not
/// centered on the pole.
fn default_bench_position(c: &Checkpoint) -> Vec3 {
    let r = &c.scene.receiver;
    r.origin + r.orientation * Vec3::new(0.8, 0.5, 1.5)
}

pub fn bench(a: BenchArgs) -> Result<()> {
    log::info!("bench: {a:?}");
    println!("{:<32} {:>9} {:>12} {:>12} {:>12}", "scheme", "N", "median_ms", "p90_ms", "bytes");
    for path in &a.checkpoints {
        let checkpoint = Checkpoint::load(path)?;
        let bytes = fs::metadata(path).map_err(io_err(path))?.len();
        let model = Model::from_checkpoint(&checkpoint)?;
        let tx = a.tx.unwrap_or_else(|| default_bench_position(&checkpoint));
        let lat = measure_latency(&model, &tx, a.warmup, a.runs)?;
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        println!(
            "{:<32} {:>9} {:>12.3} {:>12.3} {:>12}",
            name,
            model.len(),
            lat.median * 1e3,
            lat.p90 * 1e3,
            bytes
        );
    }
    Ok(())
}
