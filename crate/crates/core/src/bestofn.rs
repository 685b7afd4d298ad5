//! Best-of-N curation: keep the top-k and bottom-k candidates of a pool.

use std::cmp::Ordering;

use crate::error::{input, Result};
use crate::grpo::compute_advantages;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CurationPlan {
    pub n_candidates: usize,
    pub keep_top: usize,
    pub keep_bottom: usize,
}

impl CurationPlan {
    pub fn new(n_candidates: usize, keep_top: usize, keep_bottom: usize) -> Result<Self> {
        let plan = Self { n_candidates, keep_top, keep_bottom };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.keep_top == 0 || self.keep_bottom == 0 {
            return input("keep_top and keep_bottom must both be at least 1");
        }
        if self.keep_top + self.keep_bottom > self.n_candidates {
            return input(format!(
                "cannot keep {} + {} candidates out of {}",
                self.keep_top, self.keep_bottom, self.n_candidates
            ));
        }
        Ok(())
    }

    pub fn kept(&self) -> usize {
        self.keep_top + self.keep_bottom
    }
}

/// Indices chosen from a pool, in ascending order within each set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Curated {
    pub top: Vec<usize>,
    pub bottom: Vec<usize>,
}

impl Curated {
    /// All kept indices in ascending pool order.
    pub fn indices(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.top.iter().chain(&self.bottom).copied().collect();
        all.sort_unstable();
        all
    }
}

/// Ranks by score descending (ties by index ascending) and keeps the head
/// and tail of that ranking.
pub fn curate(scores: &[f64], plan: &CurationPlan) -> Result<Curated> {
    plan.validate()?;
    if scores.len() != plan.n_candidates {
        return input(format!("plan expects {} candidates, got {}", plan.n_candidates, scores.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return input("candidate scores must not be NaN");
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    let mut top = order[..plan.keep_top].to_vec();
    let mut bottom = order[order.len() - plan.keep_bottom..].to_vec();
    top.sort_unstable();
    bottom.sort_unstable();
    Ok(Curated { top, bottom })
}

/// Ranking statistic for a `N × K` reward matrix: the raw reward when
/// `K = 1`, otherwise the summed standardised rewards.
pub fn curation_scores(rewards: &[Vec<f64>]) -> Result<Vec<f64>> {
    match rewards.first().map(Vec::len) {
        Some(1) => Ok(rewards.iter().map(|r| r[0]).collect()),
        _ => compute_advantages(rewards),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selection_is_total_when_everything_is_kept() {
        let scores: Vec<f64> = (0..16).map(|i| ((i * 7) % 16) as f64).collect();
        let c = curate(&scores, &CurationPlan::new(16, 8, 8).unwrap()).unwrap();
        assert_eq!(c.indices(), (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn picks_best_and_worst() {
        let c = curate(&[0.1, 0.9, 0.5, 0.5], &CurationPlan::new(4, 1, 1).unwrap()).unwrap();
        assert_eq!(c.top, vec![1]);
        assert_eq!(c.bottom, vec![0]);
    }

    #[test]
    fn ties_break_by_index() {
        let c = curate(&[0.3; 8], &CurationPlan::new(8, 2, 2).unwrap()).unwrap();
        assert_eq!(c.top, vec![0, 1]);
        assert_eq!(c.bottom, vec![6, 7]);
    }

    #[test]
    fn invalid_plans() {
        assert!(CurationPlan::new(4, 3, 2).is_err());
        assert!(CurationPlan::new(4, 0, 2).is_err());
        let plan = CurationPlan::new(4, 1, 1).unwrap();
        assert!(curate(&[1.0, 2.0], &plan).is_err());
    }

    #[test]
    fn multi_reward_ranking_uses_standardised_sum() {
        // column 2 is on a much larger scale but must not dominate
        let rewards = vec![vec![1.0, 100.0], vec![0.0, 300.0], vec![0.5, 200.0]];
        let s = curation_scores(&rewards).unwrap();
        assert!((s[0] - s[1]).abs() < 1e-12);
        assert!(s[2].abs() < 1e-12);
    }
}
