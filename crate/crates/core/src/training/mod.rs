//! Optimization, gradient checking, evaluation and ablation sweeps.

mod data;
mod eval;
mod gradcheck;
pub mod metrics;
mod sweep;
mod train;

pub use data::{
    choice_vocab, extractive_vocab, prepare_choice, prepare_extractive, Prepared, PreparedChoice, PreparedExtractive,
    TaskKind,
};
pub use eval::{answer_scores, evaluate, evaluate_choice, evaluate_extractive, predictions, EvalRecord, EvalReport};
pub use gradcheck::{
    batch_gradients, batch_loss, gradient_check, tie_free_batches, CheckedScalar, GradCheckReport, RELATIVE_FLOOR,
};
pub use metrics::{exact_match, f1_score, normalize_answer};
pub use sweep::{
    ablation_sweep, ablation_sweep_with, full_factorial, Experiment, RunSpec, SweepCell, SweepRow, SweepTable,
    SWEEP_SEEDS,
};
pub use train::{mean_loss, train, train_with, Optimizer, TrainConfig, TrainReport};
