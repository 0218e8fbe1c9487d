//! Optimisation, the training loop and the evaluation pipeline.

mod ablation;
mod adam;
mod inference;
mod train;

pub use ablation::{run_ablation, AblationResult, LossSet};
pub use adam::{adam_step, AdamConfig, AdamState};
pub use inference::{
    candidates, evaluate, fit_head, ground_truth, report_from_results, run_inference,
    shuffled_baseline, suppress, ClipResult, Decode, InferenceConfig, OraclePredictor, Prediction,
    Predictor,
};
pub use train::{
    batch_gradients, train, LogEntry, TrainConfig, TrainLog, TrainOutputs, TrainState,
    CHECKPOINT_FILE, LOG_FILE,
};
