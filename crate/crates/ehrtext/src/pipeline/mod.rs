//! Training pipeline: run configuration, checkpoints, the classification
//! head, stage runners, and the data-parallel contrastive step.

pub mod checkpoint;
pub mod config;
pub mod head;
pub mod logging;
pub mod parallel;
pub mod stages;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{RunConfig, Stage, TextProfile};
pub use head::{bce_mean, head_logits, init_head_params};
pub use logging::{LogRecord, RunLog};
pub use parallel::clip_batch_grads;
pub use stages::{
    predict, run_contrastive_pretrain, run_finetune, run_masked_pretrain, FinetuneOutcome,
};
