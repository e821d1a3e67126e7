//! `radiosplat` command-line entry point.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 I/O or
//! unreadable input, 4 numeric failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use radiosplat::geometry::Vec3;
use radiosplat::Error;

#[derive(Parser, Debug)]
#[command(name = "radiosplat", version, about = "Gaussian-splatting wireless radiance fields with learnable pruning masks")]
struct Cli {
    /// Worker threads for rendering; 0 uses every core. With 1 thread every
    /// command is bit-reproducible.
    #[arg(long, global = true, default_value_t = 0, env = "RADIOSPLAT_THREADS")]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset with the multipath oracle.
    GenSynth(GenSynthArgs),
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Render the spectrum for one transmitter position.
    Predict(PredictArgs),
    /// Score a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Latency and size table across checkpoints.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct GenSynthArgs {
    /// Scene description (JSON); the built-in benchmark room when omitted.
    #[arg(long, env = "RADIOSPLAT_SCENE")]
    scene: Option<PathBuf>,
    #[arg(long, env = "RADIOSPLAT_TX_COUNT")]
    tx_count: usize,
    /// Overrides the scene's seed.
    #[arg(long, env = "RADIOSPLAT_SEED")]
    seed: Option<u64>,
    /// Fraction of positions in the training split.
    #[arg(long, default_value_t = 0.8, env = "RADIOSPLAT_SPLIT")]
    split: f64,
    #[arg(long, env = "RADIOSPLAT_OUT")]
    out: PathBuf,
    /// Also write the resolved scene description here.
    #[arg(long, env = "RADIOSPLAT_WRITE_SCENE")]
    write_scene: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    /// Full-length schedule.
    Full,
    /// 20k-iteration schedule for a desktop CPU.
    Desk,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Init {
    Cloud,
    Random,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, env = "RADIOSPLAT_DATA")]
    data: PathBuf,
    /// Output checkpoint.
    #[arg(long, env = "RADIOSPLAT_OUT")]
    out: PathBuf,
    /// Training log; defaults to the checkpoint path with `.log` appended.
    #[arg(long, env = "RADIOSPLAT_LOG")]
    log: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "desk", env = "RADIOSPLAT_PRESET")]
    preset: Preset,
    /// `key = value` file applied on top of the preset.
    #[arg(long, env = "RADIOSPLAT_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, env = "RADIOSPLAT_LAMBDA")]
    lambda: Option<f64>,
    #[arg(long, env = "RADIOSPLAT_EPSILON")]
    epsilon: Option<f64>,
    /// Total iterations.
    #[arg(long, env = "RADIOSPLAT_M")]
    m: Option<u64>,
    /// Last densification iteration.
    #[arg(long, env = "RADIOSPLAT_MD")]
    md: Option<u64>,
    /// Last pruning iteration.
    #[arg(long, env = "RADIOSPLAT_MP")]
    mp: Option<u64>,
    /// Prune interval.
    #[arg(long, env = "RADIOSPLAT_IP")]
    ip: Option<u64>,
    #[arg(long, value_enum, env = "RADIOSPLAT_INIT")]
    init: Option<Init>,
    #[arg(long, env = "RADIOSPLAT_SEED")]
    seed: Option<u64>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE", env = "RADIOSPLAT_SET", value_delimiter = ';')]
    overrides: Vec<String>,
    /// Continue from a checkpoint with optimizer state; only `--m` may
    /// change its stored configuration.
    #[arg(long, env = "RADIOSPLAT_RESUME")]
    resume: Option<PathBuf>,
    /// Omit the optimizer section from the written checkpoint.
    #[arg(long, env = "RADIOSPLAT_NO_STATE")]
    no_state: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Spect,
    Pgm,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long, env = "RADIOSPLAT_CHECKPOINT")]
    checkpoint: PathBuf,
    /// Transmitter position `x,y,z` in meters.
    #[arg(long, value_parser = parse_position, allow_hyphen_values = true, env = "RADIOSPLAT_TX")]
    tx: Vec3,
    #[arg(long, env = "RADIOSPLAT_OUT")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "spect", env = "RADIOSPLAT_FORMAT")]
    format: Format,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Split {
    Train,
    Test,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long, env = "RADIOSPLAT_CHECKPOINT")]
    checkpoint: PathBuf,
    #[arg(long, env = "RADIOSPLAT_DATA")]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "test", env = "RADIOSPLAT_SPLIT")]
    split: Split,
    /// Timed renders for the latency figures; 0 skips them.
    #[arg(long, default_value_t = 20, env = "RADIOSPLAT_RUNS")]
    runs: usize,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(required = true)]
    checkpoints: Vec<PathBuf>,
    #[arg(long, default_value_t = 20, env = "RADIOSPLAT_RUNS")]
    runs: usize,
    #[arg(long, default_value_t = 3, env = "RADIOSPLAT_WARMUP")]
    warmup: usize,
    /// Transmitter position; the scene center below the array when omitted.
    #[arg(long, value_parser = parse_position, allow_hyphen_values = true, env = "RADIOSPLAT_TX")]
    tx: Option<Vec3>,
}

fn parse_position(s: &str) -> Result<Vec3, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected x,y,z, got `{s}`"));
    }
    let mut v = [0.0; 3];
    for (dst, p) in v.iter_mut().zip(&parts) {
        *dst = p
            .trim()
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| format!("`{p}` is not a finite number"))?;
    }
    Ok(Vec3::from(v))
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) => 2,
        Error::Io { .. } | Error::Format { .. } => 3,
        Error::NonFinite { .. } | Error::Contract(_) => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        eprintln!("error: cannot start {} worker threads: {e}", cli.threads);
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::GenSynth(a) => commands::gen_synth(a),
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Eval(a) => commands::eval(a),
        Command::Bench(a) => commands::bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
