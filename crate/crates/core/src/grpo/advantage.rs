use crate::error::{input, Result};

/// Reward columns whose group standard deviation falls below this contribute
/// zero advantage.
pub const SIGMA_FLOOR: f64 = 1e-8;

/// Group-relative advantages from a `G × K` reward matrix: each column is
/// standardised with its group mean and population standard deviation, then
/// the standardised columns are summed.
pub fn compute_advantages(rewards: &[Vec<f64>]) -> Result<Vec<f64>> {
    let g = rewards.len();
    if g < 2 {
        return input(format!("advantages need a group of at least 2, got {g}"));
    }
    let k = rewards[0].len();
    if rewards.iter().any(|row| row.len() != k) {
        return input("ragged reward matrix");
    }
    let mut adv = vec![0.0; g];
    for col in 0..k {
        let mean = rewards.iter().map(|r| r[col]).sum::<f64>() / g as f64;
        let var = rewards.iter().map(|r| (r[col] - mean).powi(2)).sum::<f64>() / g as f64;
        let std = var.sqrt();
        if !(std >= SIGMA_FLOOR) {
            continue;
        }
        for (a, r) in adv.iter_mut().zip(rewards) {
            *a += (r[col] - mean) / std;
        }
    }
    Ok(adv)
}
