use crate::error::{input, Error, Result};

/// A surrogate loss value with its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateLoss {
    pub loss: f64,
    /// Same shape as the input matrix. For [`grpo_loss`] this is
    /// `∂loss/∂ρ`; for [`ddpo_baseline_loss`] it is `∂loss/∂(current logprob)`.
    pub grad: Vec<Vec<f64>>,
    /// Fraction of terms where the clipped branch was selected.
    pub clip_fraction: f64,
}

fn check_shape(rows: &[Vec<f64>], per_row: usize) -> Result<usize> {
    if rows.is_empty() {
        return input("empty group");
    }
    let steps = rows[0].len();
    if steps == 0 || rows.iter().any(|r| r.len() != steps) {
        return input("every member needs the same nonzero number of timesteps");
    }
    if per_row != rows.len() {
        return input(format!("{} rows but {per_row} advantages/rewards", rows.len()));
    }
    Ok(steps)
}

/// Negated clipped surrogate
/// `−(1/G) Σ_i (1/|T|) Σ_t min(ρ_{i,t}·A_i, clip(ρ_{i,t}, 1−ε, 1+ε)·A_i)`.
///
/// `ratios[i][t]` is the probability ratio of member `i` at its `t`-th
/// selected timestep; every timestep of a member shares the advantage `A_i`.
pub fn grpo_loss(ratios: &[Vec<f64>], advantages: &[f64], clip_eps: f64) -> Result<SurrogateLoss> {
    let steps = check_shape(ratios, advantages.len())?;
    if !(clip_eps > 0.0) {
        return input("clip range must be positive");
    }
    let g = ratios.len();
    let norm = 1.0 / (g * steps) as f64;
    let (lo, hi) = (1.0 - clip_eps, 1.0 + clip_eps);
    let mut objective = 0.0;
    let mut clipped = 0usize;
    let mut grad = Vec::with_capacity(g);
    for (row, &a) in ratios.iter().zip(advantages) {
        let mut grow = Vec::with_capacity(steps);
        for &rho in row {
            if !(rho > 0.0) || !rho.is_finite() {
                return Err(Error::Numerical(format!("probability ratio {rho} is not positive and finite")));
            }
            let unclipped = rho * a;
            let bounded = rho.clamp(lo, hi) * a;
            if bounded < unclipped {
                objective += bounded;
                clipped += 1;
                grow.push(0.0);
            } else {
                objective += unclipped;
                grow.push(-a * norm);
            }
        }
        grad.push(grow);
    }
    Ok(SurrogateLoss { loss: -objective * norm, grad, clip_fraction: clipped as f64 / (g * steps) as f64 })
}

/// Importance-weighted policy gradient with a single scalar baseline and no
/// clipping or normalisation: `−mean_{i,t} ρ_{i,t}·(r_i − b)`.
pub fn ddpo_baseline_loss(current: &[Vec<f64>], old: &[Vec<f64>], rewards: &[f64], baseline: f64) -> Result<SurrogateLoss> {
    let steps = check_shape(current, rewards.len())?;
    if old.len() != current.len() || old.iter().any(|r| r.len() != steps) {
        return input("current and old logprobs differ in shape");
    }
    let norm = 1.0 / (current.len() * steps) as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(current.len());
    for ((cur, old), &r) in current.iter().zip(old).zip(rewards) {
        let adv = r - baseline;
        let mut grow = Vec::with_capacity(steps);
        for (c, o) in cur.iter().zip(old) {
            let rho = (c - o).exp();
            loss -= rho * adv * norm;
            grow.push(-rho * adv * norm);
        }
        grad.push(grow);
    }
    Ok(SurrogateLoss { loss, grad, clip_fraction: 0.0 })
}

/// Sample estimate `mean(old − current)` of the KL divergence from the
/// rollout policy to the current one.
pub fn kl_penalty(current: &[f64], old: &[f64]) -> Result<f64> {
    if current.len() != old.len() {
        return input("logprob vectors differ in length");
    }
    if current.is_empty() {
        return Ok(0.0);
    }
    Ok(old.iter().zip(current).map(|(o, c)| o - c).sum::<f64>() / current.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(rho: f64, a: f64, eps: f64) -> f64 {
        let c = if rho < 1.0 - eps {
            1.0 - eps
        } else if rho > 1.0 + eps {
            1.0 + eps
        } else {
            rho
        };
        if rho * a < c * a {
            rho * a
        } else {
            c * a
        }
    }

    #[test]
    fn unit_ratios_give_minus_mean_advantage() {
        let adv = [0.5, -1.5, 2.0];
        let ratios = vec![vec![1.0; 4]; 3];
        let out = grpo_loss(&ratios, &adv, 1e-4).unwrap();
        assert!((out.loss - (-(0.5 - 1.5 + 2.0) / 3.0)).abs() < 1e-15);
        for (row, a) in out.grad.iter().zip(adv) {
            for g in row {
                assert!((g + a / 12.0).abs() < 1e-15);
            }
        }
        assert_eq!(out.clip_fraction, 0.0);
    }

    #[test]
    fn saturated_ratio_has_zero_gradient() {
        let eps = 0.1;
        let out = grpo_loss(&[vec![1.0 + 2.0 * eps]], &[1.0], eps).unwrap();
        assert!((out.loss + (1.0 + eps)).abs() < 1e-15);
        assert_eq!(out.grad[0][0], 0.0);
        assert_eq!(out.clip_fraction, 1.0);
    }

    #[test]
    fn two_by_two_matches_direct_formula() {
        let ratios = vec![vec![1.05, 0.8], vec![1.3, 0.95]];
        let adv = [1.0, -1.0];
        let eps = 0.1;
        let out = grpo_loss(&ratios, &adv, eps).unwrap();
        let mut obj = 0.0;
        for i in 0..2 {
            for t in 0..2 {
                obj += brute(ratios[i][t], adv[i], eps);
            }
        }
        assert!((out.loss + obj / 4.0).abs() < 1e-15);
        // [1.05 in band → A/4] [0.8 below band, A>0 → unclipped] [1.3, A<0 → unclipped] [0.95 in band]
        assert_eq!(out.grad, vec![vec![-0.25, -0.25], vec![0.25, 0.25]]);
    }

    #[test]
    fn rejects_nonpositive_ratio() {
        assert!(matches!(grpo_loss(&[vec![0.0]], &[1.0], 0.1), Err(Error::Numerical(_))));
        assert!(matches!(grpo_loss(&[vec![-1.0]], &[1.0], 0.1), Err(Error::Numerical(_))));
    }

    #[test]
    fn ddpo_zero_gradient_at_baseline() {
        let cur = vec![vec![-1.0, -2.0], vec![-0.5, 0.3]];
        let old = vec![vec![-1.2, -1.9], vec![-0.5, 0.1]];
        let out = ddpo_baseline_loss(&cur, &old, &[0.7, 0.7], 0.7).unwrap();
        assert!(out.grad.iter().flatten().all(|g| *g == 0.0));
    }

    #[test]
    fn ddpo_points_the_same_way_as_grpo_on_a_symmetric_pair() {
        let logp = vec![vec![-1.0, -0.4], vec![-0.3, -2.0]];
        let rewards = [0.9, 0.1];
        let baseline = 0.5;
        let ddpo = ddpo_baseline_loss(&logp, &logp, &rewards, baseline).unwrap();
        let adv = compute(&rewards);
        let grpo = grpo_loss(&[vec![1.0; 2], vec![1.0; 2]], &adv, 1e9).unwrap();
        // at unit ratios ∂/∂logp = ∂/∂ρ; the two differ by the positive factor 0.4
        for (a, b) in ddpo.grad.iter().flatten().zip(grpo.grad.iter().flatten()) {
            assert!((a - 0.4 * b).abs() < 1e-15);
        }
    }

    fn compute(r: &[f64]) -> Vec<f64> {
        super::super::compute_advantages(&r.iter().map(|x| vec![*x]).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn kl_examples() {
        let old = [-1.0, -2.0, 0.5];
        assert_eq!(kl_penalty(&old, &old).unwrap(), 0.0);
        let cur: Vec<f64> = old.iter().map(|o| o - 0.1).collect();
        assert!((kl_penalty(&cur, &old).unwrap() - 0.1).abs() < 1e-15);
    }
}
