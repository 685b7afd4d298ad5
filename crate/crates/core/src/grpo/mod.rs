//! Group relative policy optimization over sampler trajectories.

mod advantage;
mod loss;
mod timesteps;
mod trainer;

pub use advantage::{compute_advantages, SIGMA_FLOOR};
pub use loss::{ddpo_baseline_loss, grpo_loss, kl_penalty, SurrogateLoss};
pub use timesteps::{subsample_eligible, subsample_strategy, subsample_timesteps, TimestepMode};
pub use trainer::{policy_objective, GrpoConfig, GrpoTrainer, IterationReport, Objective, PolicyEval, SampleGroup};
