//! The quick self-check suite behind the `verify` subcommand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::grpo::{compute_advantages, policy_objective, GrpoConfig, SampleGroup};
use crate::nn::{Condition, DenoiserNet, NetSpec, PredictionKind};
use crate::oracle::{finite_diff_grad, max_rel_error, sample_moments, CheckReport, GaussianDataOracle, OraclePredictor};
use crate::samplers::{ode_step, recompute_logprobs, rollout, sde_step, NoiseLevel, StepPlan};
use crate::schedules::{interpolant_to_sde, Interpolant, NoiseSchedule, ScheduleKind};

fn normal_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn random_net(spec: NetSpec, seed: u64, scale: f64) -> Result<DenoiserNet> {
    let mut net = DenoiserNet::new(spec, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for v in net.params_mut().values_mut() {
        *v += scale * rng.sample::<f64, _>(StandardNormal);
    }
    Ok(net)
}

fn fraction_failing(analytic: &[f64], numeric: &[f64], rel: f64, floor: f64) -> f64 {
    let bad = analytic.iter().zip(numeric).filter(|(a, n)| (*a - *n).abs() > rel * n.abs().max(floor)).count();
    bad as f64 / analytic.len() as f64
}

/// Network backward pass against central differences.
pub fn check_network_gradient() -> Result<CheckReport> {
    let net = random_net(NetSpec::new(PredictionKind::Velocity, 2, vec![16], 2), 11, 0.3)?;
    let (z, t, cond) = ([0.4, -0.7], 0.37, Condition::new(1));
    let w = [0.8, -1.3];
    let (_, tape) = net.forward_with_tape(&z, t, cond)?;
    let mut analytic = vec![0.0; net.param_count()];
    net.backward_into(&tape, &w, &mut analytic)?;
    let mut probe = net.clone();
    let numeric = finite_diff_grad(
        |p| {
            probe.params_mut().set_values(p)?;
            let out = probe.forward(&z, t, cond)?;
            Ok(out[0] * w[0] + out[1] * w[1])
        },
        net.params().values(),
        1e-5,
    )?;
    let frac = fraction_failing(&analytic, &numeric, 1e-4, 1e-6);
    Ok(CheckReport::at_most("network_gradient", frac, 0.0, "fraction of parameters off by more than rel 1e-4"))
}

/// Surrogate-loss gradient on a micro instance (G = 2, T = 3) with the
/// current parameters moved away from the rollout parameters.
pub fn check_grpo_gradient() -> Result<CheckReport> {
    let sched = NoiseSchedule::rectified_flow();
    let old = random_net(NetSpec::new(PredictionKind::Velocity, 2, vec![16], 1), 3, 0.3)?;
    let plan = StepPlan::uniform(3, NoiseLevel::Constant(0.5))?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let noise = normal_vec(&mut rng, 2, 1.0);
    let trajectories = (0..2)
        .map(|_| rollout(&sched, &old, &plan, Condition::new(0), &noise, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let group = SampleGroup {
        cond: Condition::new(0),
        init_noise: noise,
        trajectories,
        rewards: vec![vec![1.0], vec![0.0]],
        advantages: vec![1.0, -1.0],
    };
    let groups = [group];
    let subsets = [vec![0, 1, 2]];
    let cfg = GrpoConfig { clip_eps: 0.05, group_size: 2, ..GrpoConfig::default() };

    let mut current = old.clone();
    for v in current.params_mut().values_mut() {
        *v += 0.02 * rng.sample::<f64, _>(StandardNormal);
    }
    let analytic = policy_objective(&current, &sched, &groups, &subsets, &cfg, true)?.grads.unwrap_or_default();
    let mut probe = current.clone();
    let numeric = finite_diff_grad(
        |p| {
            probe.params_mut().set_values(p)?;
            Ok(policy_objective(&probe, &sched, &groups, &subsets, &cfg, false)?.loss)
        },
        current.params().values(),
        1e-5,
    )?;
    let frac = fraction_failing(&analytic, &numeric, 1e-3, 1e-6);
    Ok(CheckReport::at_most("grpo_gradient", frac, 0.01, "fraction of parameters off by more than rel 1e-3"))
}

/// Reverse-SDE samples driven by the exact score of `N(0, I)` data.
pub fn check_sde_marginal(kind: ScheduleKind, samples: usize) -> Result<CheckReport> {
    let sched = NoiseSchedule::new(kind);
    let model = OraclePredictor { data: GaussianDataOracle::standard(2), sched, kind: PredictionKind::Epsilon };
    let plan = StepPlan::uniform(100, NoiseLevel::Constant(0.3))?;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut finals = Vec::with_capacity(samples);
    for _ in 0..samples {
        let z = normal_vec(&mut rng, 2, 1.0);
        finals.push(rollout(&sched, &model, &plan, Condition::NULL, &z, &mut rng)?.final_state().to_vec());
    }
    let (mean, var) = sample_moments(&finals)?;
    let se = (1.0 / samples as f64).sqrt();
    let mean_z = mean.iter().map(|m| m.abs() / se).fold(0.0, f64::max);
    let var_err = var.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    let mut report = CheckReport::at_most(
        format!("sde_marginal_{}", kind.as_str()),
        var_err,
        0.05,
        format!("max |mean|/se = {mean_z:.2}, variances {var:.4?}"),
    );
    report.passed &= mean_z <= 4.0;
    Ok(report)
}

/// Zero noise level reproduces the deterministic step.
pub fn check_noise_free_limit() -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for kind in [ScheduleKind::RectifiedFlow, ScheduleKind::VpDiffusion] {
        let sched = NoiseSchedule::new(kind);
        let net = random_net(NetSpec::new(PredictionKind::Epsilon, 2, vec![8], 1), 4, 0.3)?;
        for _ in 0..500 {
            let z = normal_vec(&mut rng, 2, 1.5);
            let t: f64 = rng.gen_range(0.05..1.0);
            let s = t * rng.gen_range(0.0..0.95);
            let a = sde_step(&sched, &net, &z, t, s, Condition::new(0), 0.0, &mut rng)?.z_next;
            let b = ode_step(&sched, &net, &z, t, s, Condition::new(0))?;
            worst = a.iter().zip(&b).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
        }
    }
    Ok(CheckReport::at_most("noise_free_limit", worst, 1e-12, "max |sde - ode|"))
}

/// `d(σ²)/dt = 2fσ² + g²` and `dα/dt = fα` against central differences.
pub fn check_coefficient_identities() -> Result<CheckReport> {
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for kind in [ScheduleKind::RectifiedFlow, ScheduleKind::VpDiffusion] {
        let sched = NoiseSchedule::new(kind);
        for i in 1..=100 {
            let t = i as f64 / 101.0;
            let c = interpolant_to_sde(&sched, t, 0.0)?;
            let s2 = |t: f64| sched.sigma(t).powi(2);
            let d_s2 = (s2(t + h) - s2(t - h)) / (2.0 * h);
            let d_a = (sched.alpha(t + h) - sched.alpha(t - h)) / (2.0 * h);
            worst = worst
                .max(max_rel_error(&[2.0 * c.f * s2(t) + c.g2], &[d_s2], 1e-12))
                .max(max_rel_error(&[c.f * sched.alpha(t)], &[d_a], 1e-12));
        }
    }
    let mid = interpolant_to_sde(&NoiseSchedule::rectified_flow(), 0.5, 0.0)?;
    let mut report = CheckReport::at_most("coefficient_identities", worst, 1e-6, format!("rectified flow at t=0.5: f={}, g2={}", mid.f, mid.g2));
    report.passed &= mid.f == -2.0 && mid.g2 == 2.0;
    Ok(report)
}

/// Zero mean, unit population std, invariance to shift and scale.
pub fn check_advantages() -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let g = rng.gen_range(2..=16);
        let r: Vec<Vec<f64>> = (0..g).map(|_| vec![rng.gen_range(-3.0..3.0)]).collect();
        let a = compute_advantages(&r)?;
        let mean = a.iter().sum::<f64>() / g as f64;
        let std = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / g as f64).sqrt();
        let shifted: Vec<Vec<f64>> = r.iter().map(|x| vec![2.5 * x[0] + 7.0]).collect();
        let b = compute_advantages(&shifted)?;
        let inv = a.iter().zip(&b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(mean.abs()).max((std - 1.0).abs()).max(inv);
    }
    let constant = compute_advantages(&[vec![0.3], vec![0.3], vec![0.3]])?;
    let mut report = CheckReport::at_most("advantage_properties", worst, 1e-8, "max of |mean|, |std - 1|, invariance gap");
    report.passed &= constant.iter().all(|a| *a == 0.0);
    Ok(report)
}

/// Recomputed log-probabilities under the rollout network equal the stored
/// ones.
pub fn check_logprob_recompute() -> Result<CheckReport> {
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for kind in [ScheduleKind::RectifiedFlow, ScheduleKind::VpDiffusion] {
        let sched = NoiseSchedule::new(kind);
        let net = random_net(NetSpec::new(PredictionKind::Velocity, 2, vec![8], 2), 6, 0.3)?;
        let plan = StepPlan::uniform(10, NoiseLevel::Constant(0.3))?;
        for _ in 0..20 {
            let z = normal_vec(&mut rng, 2, 1.0);
            let traj = rollout(&sched, &net, &plan, Condition::new(1), &z, &mut rng)?;
            let again = recompute_logprobs(&sched, &net, &traj, &plan.noise())?;
            worst = traj.logprobs.iter().zip(&again).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
        }
    }
    Ok(CheckReport::at_most("logprob_recompute", worst, 1e-10, "max |stored - recomputed|"))
}

/// Every check; an error inside a check becomes a failed report.
pub fn run_checks(marginal_samples: usize) -> Vec<CheckReport> {
    let wrap = |name: &str, r: Result<CheckReport>| r.unwrap_or_else(|e| CheckReport::failed(name, e.to_string()));
    vec![
        wrap("network_gradient", check_network_gradient()),
        wrap("grpo_gradient", check_grpo_gradient()),
        wrap("sde_marginal_rectified_flow", check_sde_marginal(ScheduleKind::RectifiedFlow, marginal_samples)),
        wrap("sde_marginal_vp_diffusion", check_sde_marginal(ScheduleKind::VpDiffusion, marginal_samples)),
        wrap("noise_free_limit", check_noise_free_limit()),
        wrap("coefficient_identities", check_coefficient_identities()),
        wrap("advantage_properties", check_advantages()),
        wrap("logprob_recompute", check_logprob_recompute()),
    ]
}
