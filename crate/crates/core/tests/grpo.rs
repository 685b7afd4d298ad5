//! Advantages, the clipped surrogate, timestep selection, rewards and
//! best-of-N curation against brute-force oracles.

use flowgrpo::bestofn::{curate, curation_scores, CurationPlan};
use flowgrpo::grpo::{
    compute_advantages, ddpo_baseline_loss, grpo_loss, kl_penalty, subsample_eligible, subsample_strategy, GrpoConfig,
    GrpoTrainer, TimestepMode,
};
use flowgrpo::nn::{Condition, DenoiserNet, NetSpec, PredictionKind};
use flowgrpo::rewards::{eval_binary, eval_reward, BinaryThreshold, RewardModel, RewardSpec};
use flowgrpo::samplers::{NoiseLevel, StepPlan};
use flowgrpo::schedules::NoiseSchedule;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn brute_term(rho: f64, a: f64, eps: f64) -> f64 {
    let c = if rho < 1.0 - eps {
        1.0 - eps
    } else if rho > 1.0 + eps {
        1.0 + eps
    } else {
        rho
    };
    (rho * a).min(c * a)
}

#[test]
fn two_by_two_surrogate_matches_the_formula() {
    let ratios = vec![vec![1.05, 0.85], vec![1.2, 0.95]];
    let adv = [1.0, -1.0];
    let out = grpo_loss(&ratios, &adv, 0.1).unwrap();
    // member 0: min(1.05, 1.05) + min(0.85, 0.9) ; member 1: min(-1.2, -1.1) + min(-0.95, -0.95)
    let expected = -((1.05 + 0.85) / 2.0 + (-1.2 - 0.95) / 2.0) / 2.0;
    assert!((out.loss - expected).abs() < 1e-15);
    assert_eq!(out.clip_fraction, 0.0);
}

#[test]
fn saturated_ratio_has_zero_gradient() {
    let out = grpo_loss(&[vec![1.0 + 2e-4]], &[1.0], 1e-4).unwrap();
    assert!((out.loss + (1.0 + 1e-4)).abs() < 1e-15);
    assert_eq!(out.grad, vec![vec![0.0]]);
    assert_eq!(out.clip_fraction, 1.0);
}

#[test]
fn unit_ratios_give_the_plain_policy_gradient() {
    let adv = [0.5, -1.5, 1.0];
    let out = grpo_loss(&vec![vec![1.0; 4]; 3], &adv, 1e-4).unwrap();
    assert!((out.loss + adv.iter().sum::<f64>() / 3.0).abs() < 1e-15);
    for (row, a) in out.grad.iter().zip(&adv) {
        assert!(row.iter().all(|g| (g + a / 12.0).abs() < 1e-15));
    }
}

#[test]
fn ddpo_and_grpo_agree_on_a_symmetric_pair() {
    // rewards {r, -r} around a zero baseline standardise to {1, -1}, so with
    // ratios inside the clip band the gradients differ only by the factor r
    let r = 0.4;
    let cur = vec![vec![0.01, -0.02], vec![0.03, 0.0]];
    let old = vec![vec![0.0; 2]; 2];
    let ratios: Vec<Vec<f64>> = cur.iter().map(|row| row.iter().map(|c: &f64| c.exp()).collect()).collect();
    let g = grpo_loss(&ratios, &compute_advantages(&[vec![r], vec![-r]]).unwrap(), 1.0).unwrap();
    let d = ddpo_baseline_loss(&cur, &old, &[r, -r], 0.0).unwrap();
    for i in 0..2 {
        for t in 0..2 {
            let grpo_wrt_logprob = g.grad[i][t] * ratios[i][t];
            assert!((d.grad[i][t] - r * grpo_wrt_logprob).abs() < 1e-15);
        }
    }
    assert!((d.loss - r * g.loss).abs() < 1e-15);
}

#[test]
fn ddpo_at_the_baseline_has_zero_gradient() {
    let out = ddpo_baseline_loss(&[vec![0.3], vec![-0.1]], &[vec![0.0], vec![0.0]], &[0.5, 0.5], 0.5).unwrap();
    assert!(out.grad.iter().flatten().all(|g| *g == 0.0));
}

#[test]
fn kl_of_a_uniform_offset() {
    let old = [0.0, -1.0, 2.0];
    let cur: Vec<f64> = old.iter().map(|o| o - 0.1).collect();
    assert!((kl_penalty(&cur, &old).unwrap() - 0.1).abs() < 1e-15);
    assert_eq!(kl_penalty(&old, &old).unwrap(), 0.0);
}

#[test]
fn table_sized_subsample() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let all: Vec<usize> = (0..50).collect();
    let s = subsample_eligible(&all, 0.6, &mut rng).unwrap();
    assert_eq!(s.len(), 30);
    assert!(s.windows(2).all(|w| w[0] < w[1]) && *s.last().unwrap() < 50);
    assert_eq!(subsample_eligible(&(0..25).collect::<Vec<_>>(), 1.0, &mut rng).unwrap(), (0..25).collect::<Vec<_>>());
    assert_eq!(subsample_strategy(10, TimestepMode::FirstFraction, 0.3, &mut rng).unwrap(), vec![0, 1, 2]);
    assert_eq!(subsample_strategy(10, TimestepMode::LastFraction, 0.4, &mut rng).unwrap(), vec![6, 7, 8, 9]);
}

#[test]
fn deterministic_steps_are_never_selected_for_training() {
    let net = DenoiserNet::new(NetSpec::new(PredictionKind::Velocity, 2, vec![4], 1), 0).unwrap();
    let plan = StepPlan::uniform(10, NoiseLevel::Linear { start: 0.5, end: 0.0 }).unwrap();
    let reward = RewardSpec::AlignmentToy { directions: vec![vec![1.0, 0.0]] };
    let cfg = GrpoConfig { tau: 1.0, group_size: 2, prompts_per_iter: 3, ..GrpoConfig::default() };
    let t = GrpoTrainer::new(net, NoiseSchedule::rectified_flow(), plan, vec![reward.into()], cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut t2 = t.clone();
    let conds = t.sample_conditions(&mut rng);
    let (groups, _) = t2.collect_groups(&conds, &mut rng).unwrap();
    for s in t.draw_subsets(&groups, &mut rng).unwrap() {
        assert_eq!(s, (0..9).collect::<Vec<_>>());
    }
}

#[test]
fn trainer_is_independent_of_thread_count() {
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut net = DenoiserNet::new(NetSpec::new(PredictionKind::Velocity, 2, vec![8], 2), 3).unwrap();
            for (i, v) in net.params_mut().values_mut().iter_mut().enumerate() {
                *v += 0.01 * ((i * 7919) % 13) as f64;
            }
            let reward = RewardSpec::ModeAffinity { targets: vec![vec![1.0, 1.0], vec![-1.0, 1.0]], bandwidth: 0.5 };
            let plan = StepPlan::uniform(5, NoiseLevel::Constant(0.3)).unwrap();
            let cfg = GrpoConfig { group_size: 4, prompts_per_iter: 3, learning_rate: 1e-2, ..GrpoConfig::default() };
            let mut t = GrpoTrainer::new(net, NoiseSchedule::rectified_flow(), plan, vec![reward.into()], cfg).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let mut rows = Vec::new();
            for _ in 0..3 {
                let conds = t.sample_conditions(&mut rng);
                rows.push(t.train_iteration(&conds, &mut rng).unwrap().csv_row(false));
            }
            (rows, t.net.params().values().to_vec())
        })
    };
    assert_eq!(run(1), run(3));
}

fn rotate(v: &[f64], angle: f64) -> Vec<f64> {
    let (s, c) = angle.sin_cos();
    vec![c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

#[test]
fn curation_handles_ties_by_index() {
    let plan = CurationPlan::new(8, 2, 2).unwrap();
    let c = curate(&[1.0; 8], &plan).unwrap();
    assert_eq!(c.indices(), vec![0, 1, 6, 7]);
}

proptest! {
    #[test]
    fn advantages_are_standardised(r in prop::collection::vec(-5.0f64..5.0, 2..17)) {
        let rows: Vec<Vec<f64>> = r.iter().map(|x| vec![*x]).collect();
        let a = compute_advantages(&rows).unwrap();
        let n = a.len() as f64;
        let mean = a.iter().sum::<f64>() / n;
        prop_assert!(mean.abs() < 1e-10);
        let m = r.iter().sum::<f64>() / n;
        let spread = (r.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt();
        if spread > 1e-6 {
            let std = (a.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
            prop_assert!((std - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn multi_reward_advantages_add_per_column(r in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 2..10)) {
        let both: Vec<Vec<f64>> = r.iter().map(|(a, b)| vec![*a, *b]).collect();
        let first = compute_advantages(&r.iter().map(|(a, _)| vec![*a]).collect::<Vec<_>>()).unwrap();
        let second = compute_advantages(&r.iter().map(|(_, b)| vec![*b]).collect::<Vec<_>>()).unwrap();
        let sum = compute_advantages(&both).unwrap();
        for i in 0..sum.len() {
            prop_assert!((sum[i] - first[i] - second[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn clipped_terms_match_brute_force(rows in prop::collection::vec(prop::collection::vec(0.5f64..1.5, 3), 1..6), eps in 0.001f64..0.5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let adv: Vec<f64> = rows.iter().map(|_| rng.gen_range(-2.0..2.0)).collect();
        let out = grpo_loss(&rows, &adv, eps).unwrap();
        let n = (rows.len() * 3) as f64;
        let brute: f64 = rows.iter().zip(&adv).map(|(row, a)| row.iter().map(|r| brute_term(*r, *a, eps)).sum::<f64>()).sum();
        prop_assert!((out.loss + brute / n).abs() < 1e-12);
        // away from the kinks the gradient is the finite difference of the term
        for (i, row) in rows.iter().enumerate() {
            for (t, &rho) in row.iter().enumerate() {
                let h = 1e-7;
                if (rho - 1.0 - eps).abs() < 1e-6 || (rho - 1.0 + eps).abs() < 1e-6 {
                    continue;
                }
                let fd = -(brute_term(rho + h, adv[i], eps) - brute_term(rho - h, adv[i], eps)) / (2.0 * h) / n;
                prop_assert!((out.grad[i][t] - fd).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn random_subsets_have_the_right_size(n in 1usize..60, tau in 0.01f64..=1.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eligible: Vec<usize> = (0..n).map(|i| 2 * i).collect();
        let s = subsample_eligible(&eligible, tau, &mut rng).unwrap();
        let want = ((tau * n as f64) - 1e-9).ceil().max(1.0) as usize;
        prop_assert_eq!(s.len(), want.min(n));
        prop_assert!(s.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(s.iter().all(|i| eligible.contains(i)));
        let mut again = ChaCha8Rng::seed_from_u64(seed);
        prop_assert_eq!(subsample_eligible(&eligible, tau, &mut again).unwrap(), s);
    }

    #[test]
    fn rewards_lie_in_the_unit_interval(z in prop::array::uniform2(-10.0f64..10.0), c in 0usize..3) {
        let specs = [
            RewardSpec::ModeAffinity { targets: vec![vec![1.0, 1.0], vec![-1.0, 0.5]], bandwidth: 0.7 },
            RewardSpec::RegionIndicatorSmooth { normals: vec![vec![1.0, 2.0]], offsets: vec![0.3], bandwidth: 0.2 },
            RewardSpec::AlignmentToy { directions: vec![vec![0.0, 1.0], vec![1.0, 1.0]] },
        ];
        let cond = if c == 2 { Condition::NULL } else { Condition::new(c) };
        for s in &specs {
            let r = eval_reward(s, &z, cond);
            prop_assert!((0.0..=1.0).contains(&r));
            let b = eval_binary(&BinaryThreshold { base: s.clone(), threshold: 0.5 }, &z, cond);
            prop_assert_eq!(b, if r > 0.5 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn rewards_are_invariant_under_joint_rotation(z in prop::array::uniform2(-3.0f64..3.0), angle in 0.0f64..6.3) {
        let t = vec![1.0, -0.5];
        let d = vec![0.3, 0.8];
        let n = vec![1.0, 1.0];
        let pairs = [
            (RewardSpec::ModeAffinity { targets: vec![t.clone()], bandwidth: 0.8 },
             RewardSpec::ModeAffinity { targets: vec![rotate(&t, angle)], bandwidth: 0.8 }),
            (RewardSpec::AlignmentToy { directions: vec![d.clone()] },
             RewardSpec::AlignmentToy { directions: vec![rotate(&d, angle)] }),
            (RewardSpec::RegionIndicatorSmooth { normals: vec![n.clone()], offsets: vec![0.2], bandwidth: 0.5 },
             RewardSpec::RegionIndicatorSmooth { normals: vec![rotate(&n, angle)], offsets: vec![0.2], bandwidth: 0.5 }),
        ];
        let zr = rotate(&z, angle);
        for (a, b) in &pairs {
            let ra = RewardModel::from(a.clone()).eval(&z, Condition::NULL);
            let rb = RewardModel::from(b.clone()).eval(&zr, Condition::NULL);
            prop_assert!((ra - rb).abs() < 1e-10);
        }
    }

    #[test]
    fn curation_matches_a_full_sort(scores in prop::collection::vec(prop_oneof![(-3i32..3).prop_map(f64::from), -3.0f64..3.0], 2..257), top_frac in 0.0f64..0.5, bottom_frac in 0.0f64..0.5) {
        let n = scores.len();
        let top = ((n as f64 * top_frac) as usize).clamp(1, n - 1);
        let bottom = ((n as f64 * bottom_frac) as usize).clamp(1, n - top);
        let plan = CurationPlan::new(n, top, bottom).unwrap();
        let c = curate(&scores, &plan).unwrap();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let mut want_top = order[..top].to_vec();
        let mut want_bottom = order[n - bottom..].to_vec();
        want_top.sort();
        want_bottom.sort();
        prop_assert_eq!(c.top, want_top);
        prop_assert_eq!(c.bottom, want_bottom);
    }

    #[test]
    fn single_reward_curation_ranks_raw_rewards(r in prop::collection::vec(0.0f64..1.0, 2..20)) {
        let rows: Vec<Vec<f64>> = r.iter().map(|x| vec![*x]).collect();
        prop_assert_eq!(curation_scores(&rows).unwrap(), r);
    }
}
