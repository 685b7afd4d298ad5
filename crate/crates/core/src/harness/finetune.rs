//! Reward fine-tuning run: metrics CSV, periodic checkpoints, reward plot.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ExperimentConfig;
use super::metrics::MetricsWriter;
use super::plot::plot_metrics_csv;
use crate::error::{Error, Result};
use crate::grpo::{GrpoTrainer, IterationReport};
use crate::nn::{save_checkpoint, DenoiserNet};

/// Files produced by one run, all under the run directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub metrics_csv: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub plot: Option<PathBuf>,
    pub config_snapshot: PathBuf,
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub artifacts: RunArtifacts,
    pub reports: Vec<IterationReport>,
    pub net: DenoiserNet,
}

pub fn check_compatible(cfg: &ExperimentConfig, net: &DenoiserNet) -> Result<()> {
    let want = cfg.net_spec();
    if *net.spec() != want {
        return Err(Error::Config(format!("checkpoint network {:?} does not match the configured {:?}", net.spec(), want)));
    }
    Ok(())
}

/// Builds the trainer a run would use, without touching the filesystem.
pub fn build_trainer(cfg: &ExperimentConfig, init: &DenoiserNet) -> Result<GrpoTrainer> {
    cfg.validate()?;
    check_compatible(cfg, init)?;
    GrpoTrainer::new(init.clone(), cfg.sched(), cfg.plan()?, cfg.reward_models(), cfg.grpo.clone())
}

/// Random stream used by fine-tuning, separate from pretraining's.
pub fn finetune_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    rng
}

fn checkpoint_path(dir: &Path, iteration: usize) -> PathBuf {
    dir.join(format!("ckpt_{iteration:05}.bin"))
}

/// Runs `finetune.iterations` training iterations from `init`, writing into
/// `cfg.output_dir`. On a training abort the rows written so far stay on
/// disk and the error is returned.
pub fn finetune(cfg: &ExperimentConfig, init: &DenoiserNet) -> Result<FinetuneOutcome> {
    let mut trainer = build_trainer(cfg, init)?;
    let dir = cfg.output_dir.clone();
    let config_snapshot = cfg.write_snapshot(&dir)?;
    let metrics_csv = dir.join("metrics.csv");
    let mut writer = MetricsWriter::create(&metrics_csv, cfg.rewards.len(), cfg.record_wallclock)?;
    let mut rng = finetune_rng(cfg.seed);
    let mut checkpoints = Vec::new();
    let mut reports = Vec::with_capacity(cfg.finetune.iterations);

    for i in 0..cfg.finetune.iterations {
        let conds = trainer.sample_conditions(&mut rng);
        let report = trainer.train_iteration(&conds, &mut rng)?;
        writer.append(&report)?;
        reports.push(report);
        if (i + 1) % cfg.finetune.checkpoint_every == 0 {
            let path = checkpoint_path(&dir, i + 1);
            save_checkpoint(&trainer.net, &path)?;
            checkpoints.push(path);
        }
    }
    drop(writer);
    let final_path = dir.join("final.bin");
    save_checkpoint(&trainer.net, &final_path)?;
    checkpoints.push(final_path);
    let plot = if reports.is_empty() { None } else { Some(plot_metrics_csv(&metrics_csv, cfg.finetune.smoothing)?) };
    Ok(FinetuneOutcome {
        artifacts: RunArtifacts { dir, metrics_csv, checkpoints, plot, config_snapshot },
        reports,
        net: trainer.net,
    })
}
