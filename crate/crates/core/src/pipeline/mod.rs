//! End-to-end correction model, its loss, optimizer and training loop.

mod config;
mod eval;
mod invariants;
mod loss;
mod model;
mod optim;
mod train;

pub use config::{Ablation, ModelConfig, TrainConfig, PAPER_LR, TOY_LR};
pub use eval::{
    evaluate, evaluate_prior, mean_metrics, predict_all, predict_all_observed, score, score_all, summarize, FamilyRow,
    SampleMetrics,
};
pub use invariants::InvariantStats;
pub use loss::{total_loss, total_loss_value};
pub use model::{ModelOut, PgNet};
pub use optim::{cosine_lr, AdamW};
pub use train::{
    train_loop, train_to_dir, LogRecord, RunConfig, TrainOptions, TrainOutcome, BEST_CKPT, CONFIG_FILE, FINAL_CKPT,
    METRICS_FILE,
};

#[cfg(test)]
mod tests;
