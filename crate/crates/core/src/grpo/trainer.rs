//! The training loop: rollouts under a frozen snapshot, group rewards and
//! advantages, then several clipped-surrogate optimizer steps.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::advantage::compute_advantages;
use super::loss::{ddpo_baseline_loss, grpo_loss, kl_penalty};
use super::timesteps::{subsample_eligible, TimestepMode};
use crate::bestofn::{curate, curation_scores, CurationPlan};
use crate::error::{input, Error, Result};
use crate::nn::{Condition, DenoiserNet, OptimizerState};
use crate::rewards::{eval_group_rewards, RewardModel};
use crate::samplers::{recompute_with_tape, rollout, LogprobRecord, StepPlan, Trajectory};
use crate::schedules::NoiseSchedule;

/// Which surrogate the update phase optimises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Clipped ratio objective with group-standardised advantages.
    Grpo,
    /// Unclipped importance-weighted objective with one global mean-reward
    /// baseline across the whole iteration.
    DdpoBaseline,
}

impl Objective {
    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Grpo => "grpo",
            Objective::DdpoBaseline => "ddpo",
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grpo" => Ok(Objective::Grpo),
            "ddpo" | "ddpo_baseline" => Ok(Objective::DdpoBaseline),
            other => input(format!("unknown objective '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrpoConfig {
    pub clip_eps: f64,
    pub group_size: usize,
    /// Fraction of stochastic transitions trained on per update.
    pub tau: f64,
    pub timestep_mode: TimestepMode,
    pub updates_per_iter: usize,
    pub prompts_per_iter: usize,
    pub learning_rate: f64,
    pub grad_clip_norm: f64,
    pub weight_decay: f64,
    pub kl_coeff: f64,
    /// Redraw the timestep subset for every update instead of once per
    /// iteration.
    pub resample_per_update: bool,
    /// One initial noise per condition, shared by the whole group.
    pub shared_init_noise: bool,
    pub objective: Objective,
    pub best_of_n: Option<CurationPlan>,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            clip_eps: 1e-4,
            group_size: 12,
            tau: 0.6,
            timestep_mode: TimestepMode::RandomFraction,
            updates_per_iter: 4,
            prompts_per_iter: 32,
            learning_rate: 1e-5,
            grad_clip_norm: 1.0,
            weight_decay: 0.0,
            kl_coeff: 0.0,
            resample_per_update: true,
            shared_init_noise: true,
            objective: Objective::Grpo,
            best_of_n: None,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_eps > 0.0) {
            return input("clip_eps must be positive");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return input("tau must lie in (0, 1]");
        }
        if self.group_size < 2 {
            return input("group_size must be at least 2");
        }
        if self.prompts_per_iter == 0 {
            return input("prompts_per_iter must be positive");
        }
        if !(self.learning_rate >= 0.0) || !(self.grad_clip_norm > 0.0) {
            return input("learning_rate must be nonnegative and grad_clip_norm positive");
        }
        if let Some(plan) = &self.best_of_n {
            plan.validate()?;
            if plan.kept() < 2 {
                return input("best-of-n must keep at least 2 candidates");
            }
        }
        Ok(())
    }

    /// Rollouts drawn per condition.
    pub fn pool_size(&self) -> usize {
        self.best_of_n.map_or(self.group_size, |p| p.n_candidates)
    }
}

/// Trajectories for one condition, with rewards and advantages.
#[derive(Debug, Clone)]
pub struct SampleGroup {
    pub cond: Condition,
    pub init_noise: Vec<f64>,
    pub trajectories: Vec<Trajectory>,
    /// `G × K`.
    pub rewards: Vec<Vec<f64>>,
    pub advantages: Vec<f64>,
}

impl SampleGroup {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Every member starts from the group's initial noise.
    pub fn shares_init_noise(&self) -> bool {
        self.trajectories.iter().all(|t| t.init_noise() == self.init_noise.as_slice())
    }
}

/// Per-iteration summary written as one metrics row.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationReport {
    pub iteration: usize,
    /// Mean of each reward over every rollout of the iteration.
    pub mean_rewards: Vec<f64>,
    pub loss: f64,
    pub clip_fraction: f64,
    /// Mean pre-clip gradient norm over the updates.
    pub grad_norm: f64,
    pub wallclock_ms: u64,
}

impl IterationReport {
    pub fn csv_header(reward_count: usize) -> String {
        let mut cols = vec!["iter".to_string()];
        cols.extend((0..reward_count).map(|k| format!("mean_reward_k{k}")));
        cols.extend(["loss", "clip_fraction", "grad_norm", "wallclock_ms"].map(String::from));
        cols.join(",")
    }

    /// With `record_wallclock == false` the timing column is written as 0
    /// so that reruns are byte-identical.
    pub fn csv_row(&self, record_wallclock: bool) -> String {
        let mut cols = vec![self.iteration.to_string()];
        cols.extend(self.mean_rewards.iter().map(|r| r.to_string()));
        cols.push(self.loss.to_string());
        cols.push(self.clip_fraction.to_string());
        cols.push(self.grad_norm.to_string());
        cols.push(if record_wallclock { self.wallclock_ms.to_string() } else { "0".into() });
        cols.join(",")
    }
}

/// Loss value, optional parameter gradient and ratio diagnostics for one
/// update.
#[derive(Debug, Clone)]
pub struct PolicyEval {
    pub loss: f64,
    pub grads: Option<Vec<f64>>,
    pub clip_fraction: f64,
    /// `ratios[group][member][j]`.
    pub ratios: Vec<Vec<Vec<f64>>>,
}

struct GroupTerms {
    records: Vec<Vec<LogprobRecord>>,
    current: Vec<Vec<f64>>,
    old: Vec<Vec<f64>>,
}

fn group_terms(net: &DenoiserNet, sched: &NoiseSchedule, group: &SampleGroup, subset: &[usize]) -> Result<GroupTerms> {
    let mut records = Vec::with_capacity(group.len());
    let mut current = Vec::with_capacity(group.len());
    let mut old = Vec::with_capacity(group.len());
    for traj in &group.trajectories {
        let recs = recompute_with_tape(sched, net, traj, &traj.plan.noise(), subset)?;
        current.push(recs.iter().map(|r| r.logprob).collect());
        old.push(subset.iter().map(|&k| traj.logprobs[k]).collect());
        records.push(recs);
    }
    Ok(GroupTerms { records, current, old })
}

/// Evaluates the configured surrogate over `groups`, restricted to each
/// group's timestep subset. With `want_grad` the parameter gradient of the
/// loss is returned as well.
pub fn policy_objective(
    net: &DenoiserNet,
    sched: &NoiseSchedule,
    groups: &[SampleGroup],
    subsets: &[Vec<usize>],
    cfg: &GrpoConfig,
    want_grad: bool,
) -> Result<PolicyEval> {
    if groups.len() != subsets.len() {
        return input("one timestep subset per group is required");
    }
    let terms: Vec<GroupTerms> = groups
        .par_iter()
        .zip(subsets.par_iter())
        .map(|(g, s)| group_terms(net, sched, g, s))
        .collect::<Result<_>>()?;

    let n_groups = groups.len() as f64;
    // per group: dL/d(current logprob) for every (member, j)
    let mut weights: Vec<Vec<Vec<f64>>> = Vec::with_capacity(groups.len());
    let mut ratios_out = Vec::with_capacity(groups.len());
    let mut loss = 0.0;
    let mut clipped = 0.0;
    let mut counted = 0.0;

    match cfg.objective {
        Objective::Grpo => {
            for (group, t) in groups.iter().zip(&terms) {
                let ratios: Vec<Vec<f64>> = t
                    .current
                    .iter()
                    .zip(&t.old)
                    .map(|(c, o)| c.iter().zip(o).map(|(c, o)| (c - o).exp()).collect())
                    .collect();
                if ratios.first().is_none_or(Vec::is_empty) {
                    weights.push(vec![Vec::new(); group.len()]);
                    ratios_out.push(ratios);
                    continue;
                }
                let out = grpo_loss(&ratios, &group.advantages, cfg.clip_eps)?;
                loss += out.loss / n_groups;
                let terms_here = (ratios.len() * ratios[0].len()) as f64;
                clipped += out.clip_fraction * terms_here;
                counted += terms_here;
                let w = out
                    .grad
                    .iter()
                    .zip(&ratios)
                    .map(|(g, r)| g.iter().zip(r).map(|(g, r)| g * r / n_groups).collect())
                    .collect();
                weights.push(w);
                ratios_out.push(ratios);
            }
        }
        Objective::DdpoBaseline => {
            let summed: Vec<Vec<f64>> =
                groups.iter().map(|g| g.rewards.iter().map(|r| r.iter().sum()).collect()).collect();
            let total: usize = summed.iter().map(Vec::len).sum();
            let baseline = summed.iter().flatten().sum::<f64>() / total as f64;
            let current: Vec<Vec<f64>> = terms.iter().flat_map(|t| t.current.iter().cloned()).collect();
            let old: Vec<Vec<f64>> = terms.iter().flat_map(|t| t.old.iter().cloned()).collect();
            let rewards: Vec<f64> = summed.iter().flatten().copied().collect();
            if current.first().is_some_and(|r| !r.is_empty()) {
                let out = ddpo_baseline_loss(&current, &old, &rewards, baseline)?;
                loss = out.loss;
                let mut grads = out.grad.into_iter();
                for group in groups {
                    weights.push((0..group.len()).map(|_| grads.next().unwrap_or_default()).collect());
                }
            } else {
                weights = groups.iter().map(|g| vec![Vec::new(); g.len()]).collect();
            }
            for t in &terms {
                ratios_out.push(
                    t.current
                        .iter()
                        .zip(&t.old)
                        .map(|(c, o)| c.iter().zip(o).map(|(c, o)| (c - o).exp()).collect())
                        .collect(),
                );
            }
        }
    }

    if cfg.kl_coeff != 0.0 {
        let cur: Vec<f64> = terms.iter().flat_map(|t| t.current.iter().flatten().copied()).collect();
        let old: Vec<f64> = terms.iter().flat_map(|t| t.old.iter().flatten().copied()).collect();
        if !cur.is_empty() {
            loss += cfg.kl_coeff * kl_penalty(&cur, &old)?;
            let dk = -cfg.kl_coeff / cur.len() as f64;
            for w in weights.iter_mut().flatten().flatten() {
                *w += dk;
            }
        }
    }

    if !loss.is_finite() {
        return Err(Error::Numerical(format!("surrogate loss is {loss}")));
    }

    let grads = if want_grad {
        let partial: Vec<Vec<f64>> = terms
            .par_iter()
            .zip(weights.par_iter())
            .map(|(t, w)| {
                let mut buf = vec![0.0; net.param_count()];
                for (recs, ws) in t.records.iter().zip(w) {
                    for (rec, &wt) in recs.iter().zip(ws) {
                        if wt != 0.0 {
                            rec.backward_into(net, wt, &mut buf)?;
                        }
                    }
                }
                Ok(buf)
            })
            .collect::<Result<_>>()?;
        let mut total = vec![0.0; net.param_count()];
        for buf in &partial {
            for (t, b) in total.iter_mut().zip(buf) {
                *t += b;
            }
        }
        Some(total)
    } else {
        None
    };

    Ok(PolicyEval {
        loss,
        grads,
        clip_fraction: if counted > 0.0 { clipped / counted } else { 0.0 },
        ratios: ratios_out,
    })
}

/// Owns the policy network, its optimizer and the sampling setup.
#[derive(Debug, Clone)]
pub struct GrpoTrainer {
    pub net: DenoiserNet,
    pub optimizer: OptimizerState,
    pub sched: NoiseSchedule,
    pub plan: StepPlan,
    pub rewards: Vec<RewardModel>,
    pub cfg: GrpoConfig,
    iteration: usize,
    noise_draws: u64,
}

impl GrpoTrainer {
    pub fn new(net: DenoiserNet, sched: NoiseSchedule, plan: StepPlan, rewards: Vec<RewardModel>, cfg: GrpoConfig) -> Result<Self> {
        cfg.validate()?;
        if rewards.is_empty() {
            return input("at least one reward model is required");
        }
        for r in &rewards {
            r.base().validate()?;
        }
        let optimizer = OptimizerState::new(net.param_count(), cfg.learning_rate).with_weight_decay(cfg.weight_decay);
        Ok(Self { net, optimizer, sched, plan, rewards, cfg, iteration: 0, noise_draws: 0 })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Draws `prompts_per_iter` condition ids uniformly with replacement.
    pub fn sample_conditions<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Condition> {
        let count = self.net.spec().condition_count;
        (0..self.cfg.prompts_per_iter)
            .map(|_| if count == 0 { Condition::NULL } else { Condition::new(rng.gen_range(0..count)) })
            .collect()
    }

    fn draw_noise<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
        (0..dim).map(|_| rng.sample(StandardNormal)).collect()
    }

    /// Rolls out the current policy for every condition and builds the
    /// training groups (curated when best-of-N is enabled). Also returns the
    /// mean of each reward over all rollouts.
    pub fn collect_groups(&mut self, conds: &[Condition], rng: &mut ChaCha8Rng) -> Result<(Vec<SampleGroup>, Vec<f64>)> {
        if conds.is_empty() {
            return input("at least one condition is required");
        }
        let dim = self.net.input_dim();
        let pool = self.cfg.pool_size();
        let shared: Vec<Option<Vec<f64>>> = conds
            .iter()
            .map(|_| self.cfg.shared_init_noise.then(|| Self::draw_noise(dim, rng)))
            .collect();
        let rollout_seed: u64 = rng.gen();
        let base_id = self.noise_draws;
        self.noise_draws += (conds.len() * pool) as u64;

        let jobs: Vec<(usize, usize)> = (0..conds.len()).flat_map(|g| (0..pool).map(move |m| (g, m))).collect();
        let (net, sched, plan) = (&self.net, &self.sched, &self.plan);
        let trajectories: Vec<Trajectory> = jobs
            .par_iter()
            .map(|&(g, m)| {
                let stream = (g * pool + m) as u64;
                let mut trng = ChaCha8Rng::seed_from_u64(rollout_seed);
                trng.set_stream(stream);
                let (noise, id) = match &shared[g] {
                    Some(noise) => (noise.clone(), base_id + (g * pool) as u64),
                    None => (Self::draw_noise(dim, &mut trng), base_id + stream),
                };
                let mut traj = rollout(sched, net, plan, conds[g], &noise, &mut trng)?;
                traj.init_noise_id = id;
                Ok(traj)
            })
            .collect::<Result<_>>()?;

        let k = self.rewards.len();
        let mut sums = vec![0.0; k];
        let mut groups = Vec::with_capacity(conds.len());
        let mut iter = trajectories.into_iter();
        for (g, &cond) in conds.iter().enumerate() {
            let members: Vec<Trajectory> = iter.by_ref().take(pool).collect();
            let finals: Vec<&[f64]> = members.iter().map(|t| t.final_state()).collect();
            let rewards = eval_group_rewards(&self.rewards, &finals, cond);
            for row in &rewards {
                for (s, r) in sums.iter_mut().zip(row) {
                    *s += r;
                }
            }
            let init_noise = shared[g].clone().unwrap_or_else(|| members[0].init_noise().to_vec());
            let (members, rewards) = match &self.cfg.best_of_n {
                Some(plan) => {
                    let keep = curate(&curation_scores(&rewards)?, plan)?.indices();
                    let rewards = keep.iter().map(|&i| rewards[i].clone()).collect();
                    let mut members = members.into_iter().map(Some).collect::<Vec<_>>();
                    let kept = keep.iter().map(|&i| members[i].take().expect("indices are distinct")).collect();
                    (kept, rewards)
                }
                None => (members, rewards),
            };
            let advantages = match self.cfg.objective {
                Objective::Grpo => compute_advantages(&rewards)?,
                Objective::DdpoBaseline => vec![0.0; members.len()],
            };
            groups.push(SampleGroup { cond, init_noise, trajectories: members, rewards, advantages });
        }
        if self.cfg.objective == Objective::DdpoBaseline {
            let n: usize = groups.iter().map(SampleGroup::len).sum();
            let baseline = groups.iter().flat_map(|g| g.rewards.iter().map(|r| r.iter().sum::<f64>())).sum::<f64>() / n as f64;
            for g in &mut groups {
                g.advantages = g.rewards.iter().map(|r| r.iter().sum::<f64>() - baseline).collect();
            }
        }
        let total = (conds.len() * pool) as f64;
        Ok((groups, sums.into_iter().map(|s| s / total).collect()))
    }

    /// One timestep subset per group, drawn from the plan's stochastic steps.
    pub fn draw_subsets<R: Rng + ?Sized>(&self, groups: &[SampleGroup], rng: &mut R) -> Result<Vec<Vec<usize>>> {
        let eligible = self.plan.stochastic_steps();
        groups
            .iter()
            .map(|_| match self.cfg.timestep_mode {
                TimestepMode::RandomFraction => subsample_eligible(&eligible, self.cfg.tau, rng),
                mode => {
                    let picked = super::subsample_strategy(eligible.len(), mode, self.cfg.tau, rng)?;
                    Ok(picked.into_iter().map(|i| eligible[i]).collect())
                }
            })
            .collect()
    }

    /// One full iteration: snapshot, rollouts, rewards, advantages and
    /// `updates_per_iter` optimizer steps.
    pub fn train_iteration(&mut self, conds: &[Condition], rng: &mut ChaCha8Rng) -> Result<IterationReport> {
        let started = Instant::now();
        let iteration = self.iteration;
        let abort = |reason: String| Error::TrainingAborted { iteration, reason };

        let (groups, mean_rewards) = self.collect_groups(conds, rng).map_err(|e| abort(e.to_string()))?;

        let mut loss_sum = 0.0;
        let mut clip_sum = 0.0;
        let mut norm_sum = 0.0;
        let mut subsets = Vec::new();
        for u in 0..self.cfg.updates_per_iter {
            if u == 0 || self.cfg.resample_per_update {
                subsets = self.draw_subsets(&groups, rng)?;
            }
            let eval = policy_objective(&self.net, &self.sched, &groups, &subsets, &self.cfg, true)
                .map_err(|e| abort(e.to_string()))?;
            let grads = eval.grads.expect("gradient requested");
            self.net.params_mut().accumulate(&grads)?;
            let norm = self
                .optimizer
                .step(self.net.params_mut(), self.cfg.grad_clip_norm)
                .map_err(|e| abort(e.to_string()))?;
            loss_sum += eval.loss;
            clip_sum += eval.clip_fraction;
            norm_sum += norm;
        }
        let updates = self.cfg.updates_per_iter.max(1) as f64;
        self.iteration += 1;
        Ok(IterationReport {
            iteration,
            mean_rewards,
            loss: loss_sum / updates,
            clip_fraction: clip_sum / updates,
            grad_norm: norm_sum / updates,
            wallclock_ms: started.elapsed().as_millis() as u64,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{NetSpec, PredictionKind};
    use crate::rewards::RewardSpec;
    use crate::samplers::NoiseLevel;

    fn trainer(cfg: GrpoConfig, rewards: Vec<RewardModel>) -> GrpoTrainer {
        let mut net = DenoiserNet::new(NetSpec::new(PredictionKind::Velocity, 2, vec![8], 2), 1).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(2);
        for v in net.params_mut().values_mut() {
            *v += r.gen_range(-0.1..0.1);
        }
        let plan = StepPlan::uniform(4, NoiseLevel::Constant(0.3)).unwrap();
        GrpoTrainer::new(net, NoiseSchedule::rectified_flow(), plan, rewards, cfg).unwrap()
    }

    fn affinity() -> RewardModel {
        RewardSpec::ModeAffinity { targets: vec![vec![1.0, 1.0], vec![-1.0, -1.0]], bandwidth: 1.0 }.into()
    }

    fn small_cfg() -> GrpoConfig {
        GrpoConfig { group_size: 4, prompts_per_iter: 2, learning_rate: 1e-2, ..GrpoConfig::default() }
    }

    #[test]
    fn groups_share_noise_and_have_zero_mean_advantages() {
        let mut t = trainer(small_cfg(), vec![affinity()]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let conds = t.sample_conditions(&mut rng);
        let (groups, means) = t.collect_groups(&conds, &mut rng).unwrap();
        assert_eq!(groups.len(), 2);
        assert_eq!(means.len(), 1);
        for g in &groups {
            assert_eq!(g.len(), 4);
            assert!(g.shares_init_noise());
            assert!(g.trajectories.iter().all(|tr| tr.cond == g.cond));
            assert!(g.advantages.iter().sum::<f64>().abs() < 1e-10);
        }
    }

    #[test]
    fn first_update_sees_unit_ratios() {
        let mut t = trainer(small_cfg(), vec![affinity()]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let conds = t.sample_conditions(&mut rng);
        let (groups, _) = t.collect_groups(&conds, &mut rng).unwrap();
        let subsets = t.draw_subsets(&groups, &mut rng).unwrap();
        let eval = policy_objective(&t.net, &t.sched, &groups, &subsets, &t.cfg, false).unwrap();
        assert!(eval.ratios.iter().flatten().flatten().all(|&r| r == 1.0));
        assert_eq!(eval.clip_fraction, 0.0);
    }

    #[test]
    fn constant_reward_leaves_params_unchanged() {
        let flat = RewardModel::from(RewardSpec::AlignmentToy { directions: vec![vec![1.0, 0.0]] });
        let bt = crate::rewards::BinaryThreshold { base: flat.base().clone(), threshold: -1.0 };
        let mut t = trainer(small_cfg(), vec![bt.into()]);
        let before = t.net.params().values().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conds = t.sample_conditions(&mut rng);
        let report = t.train_iteration(&conds, &mut rng).unwrap();
        assert_eq!(t.net.params().values(), before.as_slice());
        assert_eq!(report.mean_rewards, vec![1.0]);
        assert_eq!(report.grad_norm, 0.0);
    }

    #[test]
    fn kl_off_matches_no_kl_bit_for_bit() {
        let run = |kl: f64| {
            let mut t = trainer(GrpoConfig { kl_coeff: kl, ..small_cfg() }, vec![affinity()]);
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let mut rows = Vec::new();
            for _ in 0..3 {
                let conds = t.sample_conditions(&mut rng);
                rows.push(t.train_iteration(&conds, &mut rng).unwrap().csv_row(false));
            }
            (rows, t.net.params().values().to_vec())
        };
        assert_eq!(run(0.0), run(0.0));
        let (_, with_kl) = run(0.5);
        assert_ne!(run(0.0).1, with_kl);
    }

    #[test]
    fn best_of_n_groups_are_curated() {
        let cfg = GrpoConfig { best_of_n: Some(CurationPlan::new(8, 2, 2).unwrap()), ..small_cfg() };
        let mut t = trainer(cfg, vec![affinity()]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let conds = t.sample_conditions(&mut rng);
        let (groups, _) = t.collect_groups(&conds, &mut rng).unwrap();
        assert!(groups.iter().all(|g| g.len() == 4 && g.shares_init_noise()));
    }

    #[test]
    fn ddpo_uses_independent_noise_and_a_global_baseline() {
        let cfg = GrpoConfig { objective: Objective::DdpoBaseline, shared_init_noise: false, ..small_cfg() };
        let mut t = trainer(cfg, vec![affinity()]);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let conds = t.sample_conditions(&mut rng);
        let (groups, _) = t.collect_groups(&conds, &mut rng).unwrap();
        let all: f64 = groups.iter().flat_map(|g| g.advantages.iter()).sum();
        assert!(all.abs() < 1e-12);
        assert!(!groups[0].shares_init_noise() || groups[0].len() < 2);
        t.train_iteration(&conds, &mut rng).unwrap();
    }

    #[test]
    fn csv_row_layout() {
        let r = IterationReport { iteration: 3, mean_rewards: vec![0.5, 0.25], loss: -0.1, clip_fraction: 0.0, grad_norm: 2.0, wallclock_ms: 17 };
        assert_eq!(IterationReport::csv_header(2), "iter,mean_reward_k0,mean_reward_k1,loss,clip_fraction,grad_norm,wallclock_ms");
        assert_eq!(r.csv_row(false), "3,0.5,0.25,-0.1,0,2,0");
        assert_eq!(r.csv_row(true), "3,0.5,0.25,-0.1,0,2,17");
    }
}
