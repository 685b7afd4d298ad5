//! Experiment harness: configuration, toy data, pretraining, fine-tuning
//! runs, ablation presets, metrics files, plots and the self-check suite.

pub mod ablation;
pub mod config;
pub mod data;
pub mod finetune;
pub mod metrics;
pub mod plot;
pub mod pretrain;
pub mod verify;

pub use ablation::{run_ablation, AblationOutcome, AblationPreset, ArmResult};
pub use config::{ExperimentConfig, FinetuneConfig, MixtureSpec, PretrainConfig, RewardConfig};
pub use data::GaussianMixture;
pub use finetune::{build_trainer, finetune, finetune_rng, FinetuneOutcome, RunArtifacts};
pub use metrics::{head_tail_means, moving_average, MetricsTable, MetricsWriter};
pub use pretrain::{pretrain, PretrainOutcome};
