use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use flowgrpo::harness::{self, plot, verify, AblationPreset, ExperimentConfig};
use flowgrpo::nn::{load_checkpoint, save_checkpoint};
use flowgrpo::Error;

#[derive(Parser)]
#[command(name = "flowgrpo", version, about = "Group relative policy optimization for toy diffusion and flow samplers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain the denoiser on the configured toy mixture.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
    },
    /// Reward fine-tuning from a pretrained checkpoint.
    Finetune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
    },
    /// Run an ablation preset: timestep_modes, noise_levels, bestofn_pools or ddpo_compare.
    Ablate {
        #[arg(long)]
        preset: String,
        #[arg(long)]
        config: PathBuf,
        /// Starting checkpoint; pretrained from the config when omitted.
        #[arg(long)]
        ckpt: Option<PathBuf>,
    },
    /// Run the numerical self-check suite.
    Verify {
        /// Samples per SDE marginal check.
        #[arg(long, default_value_t = 20_000)]
        samples: usize,
    },
    /// Re-render the reward plot of a metrics CSV.
    Plot {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, default_value_t = 20)]
        window: usize,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_)) => 2,
        Some(Error::TrainingAborted { .. }) => 3,
        _ => 1,
    }
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("FLOWGRPO_THREADS") {
        let n: usize = v.parse().with_context(|| format!("FLOWGRPO_THREADS must be a positive integer, got '{v}'"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    Ok(())
}

fn load_config(path: &Path) -> anyhow::Result<ExperimentConfig> {
    Ok(ExperimentConfig::load(path)?)
}

fn pretrain_to_disk(cfg: &ExperimentConfig) -> anyhow::Result<PathBuf> {
    let out = harness::pretrain(cfg)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    cfg.write_snapshot(&cfg.output_dir)?;
    let path = cfg.output_dir.join("pretrain.bin");
    save_checkpoint(&out.net, &path)?;
    let best = out.val_history.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
    println!("pretrained {} steps, best validation loss {best:.5}", out.steps_run);
    println!("checkpoint {}", path.display());
    Ok(path)
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    configure_threads()?;
    match cli.command {
        Command::Pretrain { config } => {
            pretrain_to_disk(&load_config(&config)?)?;
        }
        Command::Finetune { config, ckpt } => {
            let cfg = load_config(&config)?;
            let net = load_checkpoint(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
            let out = harness::finetune(&cfg, &net)?;
            if let Some((first, last)) = harness::head_tail_means(
                &out.reports.iter().map(|r| r.mean_rewards.iter().sum()).collect::<Vec<f64>>(),
                cfg.finetune.smoothing,
            ) {
                println!("mean reward: first window {first:.4}, last window {last:.4}");
            }
            println!("metrics {}", out.artifacts.metrics_csv.display());
        }
        Command::Ablate { preset, config, ckpt } => {
            let preset: AblationPreset = preset.parse()?;
            let cfg = load_config(&config)?;
            let ckpt = match ckpt {
                Some(p) => p,
                None => pretrain_to_disk(&cfg)?,
            };
            let net = load_checkpoint(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
            let out = harness::run_ablation(preset, &cfg, &net)?;
            print!("{}", std::fs::read_to_string(&out.comparison_csv)?);
            println!("plot {}", out.plot.display());
        }
        Command::Verify { samples } => {
            let reports = verify::run_checks(samples);
            for r in &reports {
                println!("{r}");
            }
            if reports.iter().any(|r| !r.passed) {
                return Ok(4);
            }
        }
        Command::Plot { csv, window } => {
            let out = plot::plot_metrics_csv(&csv, window)?;
            println!("plot {}", out.display());
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
