//! Group relative policy optimization for stochastic diffusion and
//! rectified-flow samplers, at toy scale.
//!
//! The crate is organised bottom-up:
//!
//! - [`nn`]: a small MLP denoiser with exact gradients, AdamW and checkpoints.
//! - [`schedules`]: interpolant noise schedules, Gaussian scores and the
//!   conversion from interpolant coefficients to diffusion SDE coefficients.
//! - [`samplers`]: deterministic and stochastic sampling steps with exact
//!   Gaussian transition log-probabilities, and trajectory rollout.
//! - [`rewards`]: closed-form reward models and binary thresholding.
//! - [`grpo`]: group-relative advantages, the clipped surrogate, timestep
//!   selection and the training loop.
//! - [`bestofn`]: top/bottom-k curation of candidate pools.
//! - [`oracle`]: analytic oracles and checkers.
//! - [`harness`]: configuration, pretraining, fine-tuning, ablations, plots.

// NaN-rejecting checks are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bestofn;
pub mod error;
pub mod grpo;
pub mod harness;
pub mod nn;
pub mod oracle;
pub mod rewards;
pub mod samplers;
pub mod schedules;

pub use error::{Error, Result};
pub use nn::{Condition, DenoiserNet, NetSpec, OptimizerState, ParamStore, PredictionKind};
pub use samplers::{Predictor, StepPlan, Trajectory};
pub use schedules::{NoiseSchedule, ScheduleKind};
