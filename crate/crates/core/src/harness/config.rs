//! Flat `key = value` experiment configuration with dotted keys.
//!
//! Parsing starts from [`ExperimentConfig::default`] and applies every line;
//! unknown keys are rejected. [`ExperimentConfig::to_text`] writes the full
//! effective configuration in a fixed key order, and parsing that text yields
//! the same configuration again.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::bestofn::CurationPlan;
use crate::error::{Error, Result};
use crate::grpo::GrpoConfig;
use crate::nn::{NetSpec, PredictionKind};
use crate::rewards::{BinaryThreshold, RewardModel, RewardSpec};
use crate::samplers::{NoiseLevel, StepPlan};
use crate::schedules::{NoiseSchedule, ScheduleKind};

fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    pub means: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// Per-component isotropic standard deviation.
    pub scales: Vec<f64>,
}

impl MixtureSpec {
    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.means.len();
        if n == 0 || self.dim() == 0 {
            return config_err("data.means must list at least one nonempty mean");
        }
        if self.means.iter().any(|m| m.len() != self.dim()) {
            return config_err("data.means entries differ in dimension");
        }
        if self.weights.len() != n || self.scales.len() != n {
            return config_err("data.weights and data.scales need one entry per mean");
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) || self.weights.iter().sum::<f64>() <= 0.0 {
            return config_err("data.weights must be nonnegative with a positive sum");
        }
        if self.scales.iter().any(|s| !(*s > 0.0)) {
            return config_err("data.scales must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    /// Upper bound on optimizer steps.
    pub steps: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub eval_every: usize,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    pub val_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneConfig {
    pub iterations: usize,
    pub checkpoint_every: usize,
    /// Moving-average window for plots and summaries.
    pub smoothing: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardConfig {
    pub spec: RewardSpec,
    pub threshold: Option<f64>,
}

impl RewardConfig {
    pub fn model(&self) -> RewardModel {
        match self.threshold {
            Some(threshold) => BinaryThreshold { base: self.spec.clone(), threshold }.into(),
            None => self.spec.clone().into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Write real timings into the metrics CSV (breaks byte-identical reruns).
    pub record_wallclock: bool,
    pub schedule: ScheduleKind,
    pub data: MixtureSpec,
    pub net_kind: PredictionKind,
    pub hidden: Vec<usize>,
    pub time_embed_dim: usize,
    pub condition_count: usize,
    pub steps: usize,
    pub eps_level: f64,
    /// When set, the noise level ramps linearly from `eps_level` to this.
    pub eps_end: Option<f64>,
    pub grpo: GrpoConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub rewards: Vec<RewardConfig>,
}

fn square_means() -> Vec<Vec<f64>> {
    vec![vec![1.5, 1.5], vec![-1.5, 1.5], vec![-1.5, -1.5], vec![1.5, -1.5]]
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            record_wallclock: false,
            schedule: ScheduleKind::RectifiedFlow,
            data: MixtureSpec { means: square_means(), weights: vec![0.25; 4], scales: vec![0.3; 4] },
            net_kind: PredictionKind::Velocity,
            hidden: vec![32, 32],
            time_embed_dim: 16,
            condition_count: 4,
            steps: 20,
            eps_level: 0.3,
            eps_end: None,
            grpo: GrpoConfig { prompts_per_iter: 8, learning_rate: 5e-3, ..GrpoConfig::default() },
            pretrain: PretrainConfig { steps: 20_000, batch: 128, learning_rate: 3e-3, eval_every: 250, patience: 8, val_size: 2048 },
            finetune: FinetuneConfig { iterations: 300, checkpoint_every: 50, smoothing: 20 },
            rewards: vec![RewardConfig {
                spec: RewardSpec::ModeAffinity { targets: square_means(), bandwidth: 0.5 },
                threshold: None,
            }],
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().or_else(|_| config_err(format!("{key}: cannot parse '{v}'")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| parse(key, x.trim())).collect()
}

fn parse_rows(key: &str, v: &str) -> Result<Vec<Vec<f64>>> {
    v.split(';').map(|row| parse_list(key, row)).collect()
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => config_err(format!("{key}: expected a boolean, got '{v}'")),
    }
}

fn parse_enum<T: FromStr<Err = Error>>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|e: Error| Error::Config(format!("{key}: {e}")))
}

fn list<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn rows(v: &[Vec<f64>]) -> String {
    v.iter().map(|r| list(r)).collect::<Vec<_>>().join(";")
}

fn parse_reward(index: usize, fields: &BTreeMap<String, String>) -> Result<RewardConfig> {
    let key = |f: &str| format!("reward.{index}.{f}");
    let get = |f: &str| fields.get(f).ok_or_else(|| Error::Config(format!("missing {}", key(f))));
    let allowed: &[&str] = match get("kind")?.as_str() {
        "mode_affinity" => &["kind", "targets", "bandwidth", "threshold"],
        "region_indicator_smooth" => &["kind", "normals", "offsets", "bandwidth", "threshold"],
        "alignment_toy" => &["kind", "directions", "threshold"],
        other => return config_err(format!("{}: unknown reward kind '{other}'", key("kind"))),
    };
    if let Some(extra) = fields.keys().find(|f| !allowed.contains(&f.as_str())) {
        return config_err(format!("unknown key {}", key(extra)));
    }
    let spec = match get("kind")?.as_str() {
        "mode_affinity" => RewardSpec::ModeAffinity {
            targets: parse_rows(&key("targets"), get("targets")?)?,
            bandwidth: parse(&key("bandwidth"), get("bandwidth")?)?,
        },
        "region_indicator_smooth" => RewardSpec::RegionIndicatorSmooth {
            normals: parse_rows(&key("normals"), get("normals")?)?,
            offsets: parse_list(&key("offsets"), get("offsets")?)?,
            bandwidth: parse(&key("bandwidth"), get("bandwidth")?)?,
        },
        _ => RewardSpec::AlignmentToy { directions: parse_rows(&key("directions"), get("directions")?)? },
    };
    spec.validate().map_err(|e| Error::Config(format!("reward.{index}: {e}")))?;
    let threshold = fields.get("threshold").map(|v| parse(&key("threshold"), v)).transpose()?;
    Ok(RewardConfig { spec, threshold })
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut reward_fields: BTreeMap<usize, BTreeMap<String, String>> = BTreeMap::new();
        let mut bestofn: [Option<usize>; 3] = [None; 3];
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return config_err(format!("line {}: expected key = value", lineno + 1));
            };
            let (k, v) = (k.trim(), v.trim());
            match k {
                "seed" => cfg.seed = parse(k, v)?,
                "output.dir" => cfg.output_dir = PathBuf::from(v),
                "output.wallclock" => cfg.record_wallclock = parse_bool(k, v)?,
                "schedule" => cfg.schedule = parse_enum(k, v)?,
                "data.dim" => {
                    let d: usize = parse(k, v)?;
                    if d != cfg.data.dim() {
                        return config_err(format!("data.dim = {d} but data.means have dimension {}", cfg.data.dim()));
                    }
                }
                "data.means" => cfg.data.means = parse_rows(k, v)?,
                "data.weights" => cfg.data.weights = parse_list(k, v)?,
                "data.scales" => cfg.data.scales = parse_list(k, v)?,
                "net.kind" => cfg.net_kind = parse_enum(k, v)?,
                "net.hidden" => cfg.hidden = parse_list(k, v)?,
                "net.time_embed_dim" => cfg.time_embed_dim = parse(k, v)?,
                "net.condition_count" => cfg.condition_count = parse(k, v)?,
                "plan.steps" => cfg.steps = parse(k, v)?,
                "plan.eps_level" => cfg.eps_level = parse(k, v)?,
                "plan.eps_end" => cfg.eps_end = if v == "none" { None } else { Some(parse(k, v)?) },
                "grpo.clip_eps" => cfg.grpo.clip_eps = parse(k, v)?,
                "grpo.group_size" => cfg.grpo.group_size = parse(k, v)?,
                "grpo.tau" => cfg.grpo.tau = parse(k, v)?,
                "grpo.timestep_mode" => cfg.grpo.timestep_mode = parse_enum(k, v)?,
                "grpo.updates_per_iter" => cfg.grpo.updates_per_iter = parse(k, v)?,
                "grpo.prompts_per_iter" => cfg.grpo.prompts_per_iter = parse(k, v)?,
                "grpo.learning_rate" => cfg.grpo.learning_rate = parse(k, v)?,
                "grpo.grad_clip_norm" => cfg.grpo.grad_clip_norm = parse(k, v)?,
                "grpo.weight_decay" => cfg.grpo.weight_decay = parse(k, v)?,
                "grpo.kl_coeff" => cfg.grpo.kl_coeff = parse(k, v)?,
                "grpo.resample_per_update" => cfg.grpo.resample_per_update = parse_bool(k, v)?,
                "grpo.shared_init_noise" => cfg.grpo.shared_init_noise = parse_bool(k, v)?,
                "grpo.objective" => cfg.grpo.objective = parse_enum(k, v)?,
                "pretrain.steps" => cfg.pretrain.steps = parse(k, v)?,
                "pretrain.batch" => cfg.pretrain.batch = parse(k, v)?,
                "pretrain.learning_rate" => cfg.pretrain.learning_rate = parse(k, v)?,
                "pretrain.eval_every" => cfg.pretrain.eval_every = parse(k, v)?,
                "pretrain.patience" => cfg.pretrain.patience = parse(k, v)?,
                "pretrain.val_size" => cfg.pretrain.val_size = parse(k, v)?,
                "finetune.iterations" => cfg.finetune.iterations = parse(k, v)?,
                "finetune.checkpoint_every" => cfg.finetune.checkpoint_every = parse(k, v)?,
                "finetune.smoothing" => cfg.finetune.smoothing = parse(k, v)?,
                "bestofn.n" => bestofn[0] = Some(parse(k, v)?),
                "bestofn.top" => bestofn[1] = Some(parse(k, v)?),
                "bestofn.bottom" => bestofn[2] = Some(parse(k, v)?),
                _ => {
                    let parts: Vec<&str> = k.splitn(3, '.').collect();
                    match parts.as_slice() {
                        ["reward", idx, field] => {
                            let idx: usize = parse(k, idx)?;
                            let slot = reward_fields.entry(idx).or_default();
                            if slot.insert(field.to_string(), v.to_string()).is_some() {
                                return config_err(format!("duplicate key {k}"));
                            }
                        }
                        _ => return config_err(format!("unknown key '{k}'")),
                    }
                }
            }
        }
        if !reward_fields.is_empty() {
            if reward_fields.keys().copied().ne(0..reward_fields.len()) {
                return config_err("reward indices must be 0, 1, 2, ... without gaps");
            }
            cfg.rewards = reward_fields.iter().map(|(i, f)| parse_reward(*i, f)).collect::<Result<_>>()?;
        }
        cfg.grpo.best_of_n = match bestofn {
            [None, None, None] => None,
            [Some(n), Some(top), Some(bottom)] => {
                Some(CurationPlan::new(n, top, bottom).map_err(|e| Error::Config(format!("bestofn: {e}")))?)
            }
            _ => return config_err("bestofn.n, bestofn.top and bestofn.bottom must be given together"),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        self.data.validate()?;
        self.net_spec().validate().map_err(wrap)?;
        self.plan().map_err(wrap)?;
        self.grpo.validate().map_err(wrap)?;
        if self.rewards.is_empty() {
            return config_err("at least one reward is required");
        }
        for r in &self.rewards {
            r.spec.validate().map_err(wrap)?;
        }
        let p = &self.pretrain;
        if p.batch == 0 || p.eval_every == 0 || p.val_size == 0 || !(p.learning_rate > 0.0) {
            return config_err("pretrain.batch, eval_every, val_size and learning_rate must be positive");
        }
        if self.finetune.checkpoint_every == 0 || self.finetune.smoothing == 0 {
            return config_err("finetune.checkpoint_every and finetune.smoothing must be positive");
        }
        Ok(())
    }

    pub fn sched(&self) -> NoiseSchedule {
        NoiseSchedule::new(self.schedule)
    }

    pub fn net_spec(&self) -> NetSpec {
        NetSpec {
            kind: self.net_kind,
            input_dim: self.data.dim(),
            hidden_dims: self.hidden.clone(),
            time_embed_dim: self.time_embed_dim,
            condition_count: self.condition_count,
        }
    }

    pub fn noise_level(&self) -> NoiseLevel {
        match self.eps_end {
            Some(end) => NoiseLevel::Linear { start: self.eps_level, end },
            None => NoiseLevel::Constant(self.eps_level),
        }
    }

    pub fn plan(&self) -> Result<StepPlan> {
        StepPlan::uniform(self.steps, self.noise_level())
    }

    pub fn reward_models(&self) -> Vec<RewardModel> {
        self.rewards.iter().map(RewardConfig::model).collect()
    }

    /// Canonical text form; `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("output.dir", self.output_dir.display().to_string());
        kv("output.wallclock", self.record_wallclock.to_string());
        kv("schedule", self.schedule.as_str().into());
        kv("data.dim", self.data.dim().to_string());
        kv("data.means", rows(&self.data.means));
        kv("data.weights", list(&self.data.weights));
        kv("data.scales", list(&self.data.scales));
        kv("net.kind", self.net_kind.as_str().into());
        kv("net.hidden", list(&self.hidden));
        kv("net.time_embed_dim", self.time_embed_dim.to_string());
        kv("net.condition_count", self.condition_count.to_string());
        kv("plan.steps", self.steps.to_string());
        kv("plan.eps_level", self.eps_level.to_string());
        kv("plan.eps_end", self.eps_end.map_or("none".into(), |e| e.to_string()));
        let g = &self.grpo;
        kv("grpo.clip_eps", g.clip_eps.to_string());
        kv("grpo.group_size", g.group_size.to_string());
        kv("grpo.tau", g.tau.to_string());
        kv("grpo.timestep_mode", g.timestep_mode.as_str().into());
        kv("grpo.updates_per_iter", g.updates_per_iter.to_string());
        kv("grpo.prompts_per_iter", g.prompts_per_iter.to_string());
        kv("grpo.learning_rate", g.learning_rate.to_string());
        kv("grpo.grad_clip_norm", g.grad_clip_norm.to_string());
        kv("grpo.weight_decay", g.weight_decay.to_string());
        kv("grpo.kl_coeff", g.kl_coeff.to_string());
        kv("grpo.resample_per_update", g.resample_per_update.to_string());
        kv("grpo.shared_init_noise", g.shared_init_noise.to_string());
        kv("grpo.objective", g.objective.as_str().into());
        let p = &self.pretrain;
        kv("pretrain.steps", p.steps.to_string());
        kv("pretrain.batch", p.batch.to_string());
        kv("pretrain.learning_rate", p.learning_rate.to_string());
        kv("pretrain.eval_every", p.eval_every.to_string());
        kv("pretrain.patience", p.patience.to_string());
        kv("pretrain.val_size", p.val_size.to_string());
        kv("finetune.iterations", self.finetune.iterations.to_string());
        kv("finetune.checkpoint_every", self.finetune.checkpoint_every.to_string());
        kv("finetune.smoothing", self.finetune.smoothing.to_string());
        if let Some(b) = &g.best_of_n {
            kv("bestofn.n", b.n_candidates.to_string());
            kv("bestofn.top", b.keep_top.to_string());
            kv("bestofn.bottom", b.keep_bottom.to_string());
        }
        for (i, r) in self.rewards.iter().enumerate() {
            let key = |f: &str| format!("reward.{i}.{f}");
            kv(&key("kind"), r.spec.kind_name().into());
            match &r.spec {
                RewardSpec::ModeAffinity { targets, bandwidth } => {
                    kv(&key("targets"), rows(targets));
                    kv(&key("bandwidth"), bandwidth.to_string());
                }
                RewardSpec::RegionIndicatorSmooth { normals, offsets, bandwidth } => {
                    kv(&key("normals"), rows(normals));
                    kv(&key("offsets"), list(offsets));
                    kv(&key("bandwidth"), bandwidth.to_string());
                }
                RewardSpec::AlignmentToy { directions } => kv(&key("directions"), rows(directions)),
            }
            if let Some(t) = r.threshold {
                kv(&key("threshold"), t.to_string());
            }
        }
        s
    }

    /// Writes the canonical snapshot to `dir/config.txt`.
    pub fn write_snapshot(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("config.txt");
        std::fs::write(&path, self.to_text())?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_text();
        let back = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn full_round_trip_with_optional_sections() {
        let text = "seed = 7\nschedule = vp_diffusion\nnet.kind = epsilon\nplan.eps_end = 0.1\n\
                    bestofn.n = 16\nbestofn.top = 4\nbestofn.bottom = 4\n\
                    reward.0.kind = region_indicator_smooth\nreward.0.normals = 1,0;0,1\nreward.0.offsets = 0.5,-0.25\n\
                    reward.0.bandwidth = 0.1\nreward.0.threshold = 0.6\n\
                    reward.1.kind = alignment_toy\nreward.1.directions = 1,1\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.rewards.len(), 2);
        assert_eq!(cfg.rewards[0].threshold, Some(0.6));
        assert_eq!(cfg.grpo.best_of_n.unwrap().n_candidates, 16);
        assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn rejects_unknown_and_malformed_keys() {
        for bad in [
            "nonsense = 1",
            "seed",
            "seed = abc",
            "grpo.tau = 1.5",
            "grpo.group_size = 1",
            "bestofn.n = 8",
            "reward.1.kind = alignment_toy\nreward.1.directions = 1,0",
            "reward.0.kind = mode_affinity\nreward.0.targets = 1,1\nreward.0.bandwidth = 1\nreward.0.extra = 2",
            "data.dim = 3",
            "schedule = cosine",
        ] {
            let err = ExperimentConfig::parse(bad).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{bad}: {err:?}");
        }
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = ExperimentConfig::parse("# a comment\n\n  seed = 3  \n").unwrap();
        assert_eq!(cfg.seed, 3);
    }
}
