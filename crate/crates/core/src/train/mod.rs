//! Orchestration: run configuration, pre-training, scoring, the linear
//! intent probe, embedding export and the end-to-end gradient check.

mod config;
mod gradcheck;
mod model;
mod pretrain;
mod probe;
mod report;

pub use config::{LrSchedule, RunConfig};
pub use gradcheck::{gradcheck, GradCheckSetup, ModeCheck, GRADCHECK_TOLERANCE};
pub use model::{Model, CONFIG_FILE, PARAMS_FILE, VOCAB_FILE};
pub use pretrain::{batch_loss, pretrain, run_pretrain, BatchLoss, PreparedBatch, StepMetrics, Trainer};
pub use probe::{intent_labels, is_held_out, probe, ProbeConfig, ProbeReport};
pub use report::{annotation_from_document, export_embeddings, score_trees, ScoreReport, ViewRow};
