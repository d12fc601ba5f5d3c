//! End-to-end flows.

mod ablation;
mod config;
mod generator;
mod objective;
mod ptq;
mod qat;
mod train;

pub use ablation::{ablation_run, stack_batches, AblationOptions, AblationTable, MeanStd, SeedCase, SeedResult, VariantSummary};
pub use config::{LseReduction, QatOptions, RunConfig, Variant};
pub use generator::{GeneratorForward, GeneratorNet, OUTPUT_BOUND};
pub use ptq::{
    calibrate_quantized, dsg_ptq_generate, generate_batch, generate_calibration_set, ptq_run, run_relaxation, CalibrationSet, LossRow, PtqOutcome, SynthBatch,
};
pub use qat::{dsg_qat_train, generator_batch, QatOutcome, QatRow};
pub use train::{evaluate, toy_network, train_fp, TrainOptions, TrainReport};
