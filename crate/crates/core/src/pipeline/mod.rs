//! End-to-end orchestration: dataset generation, training, FER evaluation,
//! the distance sweep, and the file formats and reports they produce.

mod bench;
mod config;
mod dataset;
mod eval;
mod image;
mod train;

use thiserror::Error;

pub use bench::{run_benchmark, BenchReport};
pub use config::{page_seed, ExperimentConfig, ModelKind, Split, TrainConfig};
pub use dataset::{
    generate_dataset, generate_split, read_dataset, reconstruct_page, write_dataset, Dataset,
    DATASET_MAGIC,
};
pub use eval::{evaluate_fer, Decoder, FerReport};
pub use image::{read_pgm, write_pgm};
pub use train::{build_model, run_training, steps_per_epoch, EpochRecord, Trainer, TrainingOutcome};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("dataset file: {0}")]
    Dataset(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("template decoder requires no training")]
    TemplateTraining,
    #[error(transparent)]
    Page(#[from] crate::datapage::PageError),
    #[error(transparent)]
    Optics(#[from] crate::optics::OpticsError),
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
}

pub type Result<T> = std::result::Result<T, PipelineError>;
