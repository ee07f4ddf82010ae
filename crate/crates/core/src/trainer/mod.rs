//! Three-stage training: classification fine-tuning, keyword-masked
//! language modeling, then the combined objective, plus the ablation modes.

mod checkpoint;
mod config;
mod pipeline;
mod schedule;
mod stages;

pub use checkpoint::{Checkpoint, Stage, FORMAT_VERSION};
pub use config::{Mode, TaskView, TrainConfig};
pub use pipeline::{
    load_run, prepare, tokenize_dataset, train_modes, train_pipeline, train_prepared,
    write_artifacts, ModeRun, Prepared, TrainOutput,
};
pub use schedule::lr_schedule;
pub use stages::{
    class_keyword_ids, gradient_norm, install_proxy_head, recenter_proxies, refreshed_centroids,
    sgd_step, stage1_finetune, stage2_semantic_mlm, stage3_finetune, validation_accuracy,
    BatchObserver, LogRecord, NoObserver, StageResult, TokenizedSplit,
};
