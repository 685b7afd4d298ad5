//! Ablation presets: several fine-tuning arms from one base configuration
//! and one starting network, with a comparison table and combined plot.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use super::config::ExperimentConfig;
use super::finetune::finetune;
use super::metrics::{head_tail_means, moving_average, MetricsTable};
use super::plot::{line_chart, Series};
use crate::bestofn::CurationPlan;
use crate::error::{Error, Result};
use crate::grpo::{Objective, TimestepMode};
use crate::nn::DenoiserNet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationPreset {
    TimestepModes,
    NoiseLevels,
    BestofnPools,
    DdpoCompare,
}

impl AblationPreset {
    pub fn as_str(self) -> &'static str {
        match self {
            AblationPreset::TimestepModes => "timestep_modes",
            AblationPreset::NoiseLevels => "noise_levels",
            AblationPreset::BestofnPools => "bestofn_pools",
            AblationPreset::DdpoCompare => "ddpo_compare",
        }
    }
}

impl fmt::Display for AblationPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "timestep_modes" => Ok(AblationPreset::TimestepModes),
            "noise_levels" => Ok(AblationPreset::NoiseLevels),
            "bestofn_pools" => Ok(AblationPreset::BestofnPools),
            "ddpo_compare" => Ok(AblationPreset::DdpoCompare),
            other => Err(Error::Config(format!("unknown ablation preset '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Arm {
    pub name: String,
    pub cfg: ExperimentConfig,
}

fn arm(base: &ExperimentConfig, preset: AblationPreset, name: &str, edit: impl FnOnce(&mut ExperimentConfig)) -> Arm {
    let mut cfg = base.clone();
    edit(&mut cfg);
    cfg.output_dir = base.output_dir.join(preset.as_str()).join(name);
    Arm { name: name.to_string(), cfg }
}

/// The arms of `preset`; all share the base seed.
pub fn preset_arms(preset: AblationPreset, base: &ExperimentConfig) -> Result<Vec<Arm>> {
    let p = preset;
    let arms = match preset {
        AblationPreset::TimestepModes => {
            let mode = |m: TimestepMode, tau: f64| {
                move |c: &mut ExperimentConfig| {
                    c.grpo.timestep_mode = m;
                    c.grpo.tau = tau;
                }
            };
            vec![
                arm(base, p, "first30", mode(TimestepMode::FirstFraction, 0.3)),
                arm(base, p, "random30", mode(TimestepMode::RandomFraction, 0.3)),
                arm(base, p, "random60", mode(TimestepMode::RandomFraction, 0.6)),
                arm(base, p, "full", mode(TimestepMode::RandomFraction, 1.0)),
            ]
        }
        AblationPreset::NoiseLevels => [0.1, 0.3]
            .iter()
            .map(|&e| {
                arm(base, p, &format!("eps{e}"), |c| {
                    c.eps_level = e;
                    c.eps_end = None;
                })
            })
            .collect(),
        AblationPreset::BestofnPools => {
            let mut arms = vec![arm(base, p, "plain16", |c| {
                c.grpo.group_size = 16;
                c.grpo.best_of_n = None;
            })];
            for n in [16, 64, 256] {
                let plan = CurationPlan::new(n, 8, 8)?;
                arms.push(arm(base, p, &format!("bon{n}"), |c| {
                    c.grpo.group_size = 16;
                    c.grpo.best_of_n = Some(plan);
                }));
            }
            arms
        }
        AblationPreset::DdpoCompare => vec![
            arm(base, p, "grpo", |c| c.grpo.objective = Objective::Grpo),
            arm(base, p, "ddpo", |c| {
                c.grpo.objective = Objective::DdpoBaseline;
                c.grpo.shared_init_noise = false;
            }),
        ],
    };
    for a in &arms {
        a.cfg.validate()?;
    }
    Ok(arms)
}

#[derive(Debug, Clone)]
pub struct ArmResult {
    pub name: String,
    pub metrics_csv: PathBuf,
    /// `None` when the arm finished; otherwise why it stopped.
    pub aborted: Option<String>,
    /// Per-iteration summed mean reward, read back from the CSV.
    pub rewards: Vec<f64>,
    /// Any non-finite loss or gradient norm in the rows written.
    pub non_finite: bool,
}

impl ArmResult {
    pub fn status(&self) -> &'static str {
        match (&self.aborted, self.non_finite) {
            (Some(_), _) => "aborted",
            (None, true) => "non_finite",
            (None, false) => "ok",
        }
    }

    pub fn diverged(&self) -> bool {
        self.aborted.is_some() || self.non_finite
    }
}

#[derive(Debug, Clone)]
pub struct AblationOutcome {
    pub arms: Vec<ArmResult>,
    pub comparison_csv: PathBuf,
    pub plot: PathBuf,
}

fn read_arm(name: &str, csv: PathBuf, aborted: Option<String>) -> ArmResult {
    let table = MetricsTable::read(&csv).ok();
    let (rewards, non_finite) = match &table {
        Some(t) => {
            let cols: Vec<Vec<f64>> = t.reward_columns().iter().filter_map(|c| t.column(c)).collect();
            let rewards = (0..t.rows.len()).map(|i| cols.iter().map(|c| c[i]).sum()).collect();
            let bad = |name: &str| t.column(name).unwrap_or_default().iter().any(|v| !v.is_finite());
            (rewards, bad("loss") || bad("grad_norm"))
        }
        None => (Vec::new(), false),
    };
    ArmResult { name: name.to_string(), metrics_csv: csv, aborted, rewards, non_finite }
}

/// Runs every arm of `preset` from `init`. An arm that aborts is recorded
/// and the remaining arms still run.
pub fn run_ablation(preset: AblationPreset, base: &ExperimentConfig, init: &DenoiserNet) -> Result<AblationOutcome> {
    let arms = preset_arms(preset, base)?;
    let root = base.output_dir.join(preset.as_str());
    std::fs::create_dir_all(&root)?;
    let mut results = Vec::with_capacity(arms.len());
    for a in &arms {
        let aborted = match finetune(&a.cfg, init) {
            Ok(_) => None,
            Err(e @ Error::TrainingAborted { .. }) => Some(e.to_string()),
            Err(e) => return Err(e),
        };
        results.push(read_arm(&a.name, a.cfg.output_dir.join("metrics.csv"), aborted));
    }

    let window = base.finetune.smoothing;
    let mut table = String::from("arm,status,iterations,initial_mean,final_mean\n");
    for r in &results {
        let (first, last) = head_tail_means(&r.rewards, window).unwrap_or((f64::NAN, f64::NAN));
        table.push_str(&format!("{},{},{},{first},{last}\n", r.name, r.status(), r.rewards.len()));
    }
    let comparison_csv = root.join("comparison.csv");
    std::fs::write(&comparison_csv, table)?;

    let series: Vec<Series> = results
        .iter()
        .map(|r| Series {
            label: r.name.clone(),
            points: moving_average(&r.rewards, window).into_iter().enumerate().map(|(i, v)| (i as f64, v)).collect(),
        })
        .collect();
    let plot = root.join("comparison.svg");
    std::fs::write(&plot, line_chart(&format!("{preset}: reward (moving average)"), "iteration", "mean reward", &series))?;
    Ok(AblationOutcome { arms: results, comparison_csv, plot })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_have_the_expected_arms() {
        let base = ExperimentConfig::default();
        let names = |p| preset_arms(p, &base).unwrap().into_iter().map(|a| a.name).collect::<Vec<_>>();
        assert_eq!(names(AblationPreset::TimestepModes), ["first30", "random30", "random60", "full"]);
        assert_eq!(names(AblationPreset::NoiseLevels), ["eps0.1", "eps0.3"]);
        assert_eq!(names(AblationPreset::BestofnPools), ["plain16", "bon16", "bon64", "bon256"]);
        assert_eq!(names(AblationPreset::DdpoCompare), ["grpo", "ddpo"]);
        let arms = preset_arms(AblationPreset::NoiseLevels, &base).unwrap();
        assert!(arms.iter().all(|a| a.cfg.seed == base.seed));
        assert_ne!(arms[0].cfg.output_dir, arms[1].cfg.output_dir);
    }

    #[test]
    fn preset_names_parse() {
        for p in [AblationPreset::TimestepModes, AblationPreset::NoiseLevels, AblationPreset::BestofnPools, AblationPreset::DdpoCompare] {
            assert_eq!(p.as_str().parse::<AblationPreset>().unwrap(), p);
        }
        assert!(matches!("nope".parse::<AblationPreset>(), Err(Error::Config(_))));
    }

    #[test]
    fn small_grid_runs_and_writes_comparison() {
        let dir = tempfile::tempdir().unwrap();
        let mut base = ExperimentConfig::default();
        base.output_dir = dir.path().to_path_buf();
        base.hidden = vec![4];
        base.steps = 3;
        base.grpo.group_size = 2;
        base.grpo.prompts_per_iter = 1;
        base.grpo.updates_per_iter = 1;
        base.finetune.iterations = 2;
        let net = DenoiserNet::new(base.net_spec(), 0).unwrap();
        let out = run_ablation(AblationPreset::DdpoCompare, &base, &net).unwrap();
        assert_eq!(out.arms.len(), 2);
        let text = std::fs::read_to_string(&out.comparison_csv).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(out.plot.exists());
    }
}
