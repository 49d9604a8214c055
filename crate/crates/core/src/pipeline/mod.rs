//! Data synthesis, training and evaluation around the network.

pub mod data;
pub mod image_io;
pub mod infer;
pub mod loss;
pub mod metrics;
pub mod optim;
pub mod report;
pub mod train;

pub use data::{blur_image, blur_kernel, sample_batch, synth_dataset, BlurKind, BlurSpec, Pair, SharpSource};
pub use infer::{evaluate, infer_image, TILE_OVERLAP};
pub use loss::{charbonnier_loss, charbonnier_value};
pub use metrics::{mse, psnr};
pub use optim::{adamw_update, cosine_lr, AdamW, AdamWConfig};
pub use report::{collect_runs, report_csv, RunMetrics, RunRow};
pub use train::{train, DataConfig, RunConfig, SchedulePhase, TrainConfig, TrainOutcome, Trainer};
