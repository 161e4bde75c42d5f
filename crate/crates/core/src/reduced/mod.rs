//! The reduced two-layer model, its perturbed cross-entropy loss, closed-form
//! gradients, and training loops.

pub mod model;
pub mod population;
pub mod train;

pub use model::{avg_attn, edge_weights, forward_with_pattern, ReducedParams};
pub use population::{
    evaluate, finite_sample_grads, finite_sample_loss, population_loss, population_loss_mc, prefix_probability,
    Estimator, Evaluation, Grads, LossReport, WeightedSet, EXACT_ENUMERATION_LIMIT,
};
pub use train::{
    cosine_rate, run_algorithm1, run_joint, train_algorithm1, Stage, StepRecord, TrainConfig, TrainRun,
    TrainTrajectory,
};
