//! The denoiser, its training loop and sampler, and checkpoints.

mod checkpoint;
mod denoiser;
mod session;
mod train;

pub use checkpoint::{Checkpoint, CheckpointHeader, DirLock, TensorEntry, CKPT_MAGIC, CKPT_VERSION, LOCK_FILE};
pub use denoiser::{timestep_features, Condition, Denoiser, ForwardCache};
pub use session::{build_examples, stage_config, MetricRecord, Outcome, Trainer};
pub use train::{
    adamw_update, early_stop_check, ema_update, eval_loss, sample_video, train_step, EvalRecord,
    Example, TrainState,
};
