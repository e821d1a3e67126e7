//! Training engine: schedule, optimizer, density control, checkpoints and
//! evaluation.

pub mod checkpoint;
pub mod config;
pub mod densify;
pub mod engine;
pub mod eval;
pub mod optim;

pub use checkpoint::Checkpoint;
pub use config::{InitMode, TrainConfig};
pub use engine::{run, train, LogRecord, Phase, Trainer, TrainOutcome};
pub use eval::{evaluate, measure_latency, EvalReport, LatencyStats, Model};
