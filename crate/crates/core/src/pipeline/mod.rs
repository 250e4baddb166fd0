//! Range test, staged fine-tuning, ablation and run artifacts.

pub mod ablation;
pub mod artifacts;
pub mod checkpoint;
pub mod config;
pub mod report;
pub mod train;

pub use ablation::{run_ablation, AblationReport};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Progress, CHECKPOINT_VERSION};
pub use config::{
    LrKeyword, LrSetting, PipelineConfig, Stage, Variant, DESK_SCALE_SIZES, FULL_SCALE_SIZES,
};
pub use report::{parse_trace_csv, schedule_svg, trace_csv, RunReport, StageReport, TraceRow};
pub use train::{
    evaluate_split, find_lr, run_training, stage_policy, steps_per_epoch, ModelTrainee, RunOptions,
    RunOutcome, TrainedRun, LR_FIND_EPOCH, MODEL_CHECKPOINT, RESUME_CHECKPOINT,
};
