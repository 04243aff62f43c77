//! Losses and optimizers: the scaled hinge loss, projected gradient descent,
//! single-sample noisy SGD with repetition and private selection, and DP-SGD
//! with per-example clipping.
//!
//! Every iterate is kept in the closed unit ball.

mod dpsgd;
mod gd;
mod loss;
mod noisy_sgd;

pub use dpsgd::{
    dp_sgd, dp_sgd_traced, BatchSampling, LearningRate, SgdSchedule, SgdTrace, DEFAULT_BATCH_SIZES,
    DEFAULT_CLIP_NORM, DEFAULT_DELTA, DEFAULT_LEARNING_RATES, DEFAULT_STEPS,
};
pub use gd::{gd_baseline, gd_trajectory};
pub use loss::{project_unit_ball, scaled_hinge_grad, scaled_hinge_loss, Loss, ScaledHingeLoss};
pub use noisy_sgd::{
    a_base, a_base_observed, a_noisy_sgd, repetitions, BaseRunReport, BudgetSplit, NoisySgdConfig,
    NoisySgdReport, DEFAULT_STEP_CAP,
};

