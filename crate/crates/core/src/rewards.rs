//! Closed-form reward models over final samples `z_0`, plus binary
//! thresholding.
//!
//! Per-condition parameter lists hold either one shared entry or one entry
//! per condition. The null condition (or an id past the end of the list)
//! takes the best score over all entries.

use crate::error::{input, Result};
use crate::nn::Condition;

#[derive(Debug, Clone, PartialEq)]
pub enum RewardSpec {
    /// `exp(−‖z − μ_c‖² / (2b²))`.
    ModeAffinity { targets: Vec<Vec<f64>>, bandwidth: f64 },
    /// `sigmoid((n_c·z − offset_c) / (‖n_c‖·b))`: a soft indicator of the
    /// half-space `n_c·z > offset_c`.
    RegionIndicatorSmooth { normals: Vec<Vec<f64>>, offsets: Vec<f64>, bandwidth: f64 },
    /// `(1 + cos∠(z, d_c)) / 2`; 0.5 at `z = 0`.
    AlignmentToy { directions: Vec<Vec<f64>> },
}

impl RewardSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            RewardSpec::ModeAffinity { .. } => "mode_affinity",
            RewardSpec::RegionIndicatorSmooth { .. } => "region_indicator_smooth",
            RewardSpec::AlignmentToy { .. } => "alignment_toy",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonzero = |v: &Vec<f64>| v.iter().any(|x| *x != 0.0);
        match self {
            RewardSpec::ModeAffinity { targets, bandwidth } => {
                if targets.is_empty() {
                    return input("mode_affinity needs at least one target");
                }
                if !(*bandwidth > 0.0) {
                    return input("bandwidth must be positive");
                }
            }
            RewardSpec::RegionIndicatorSmooth { normals, offsets, bandwidth } => {
                if normals.is_empty() || normals.len() != offsets.len() {
                    return input("region_indicator_smooth needs matching normals and offsets");
                }
                if !normals.iter().all(nonzero) {
                    return input("normal vectors must be nonzero");
                }
                if !(*bandwidth > 0.0) {
                    return input("bandwidth must be positive");
                }
            }
            RewardSpec::AlignmentToy { directions } => {
                if directions.is_empty() || !directions.iter().all(nonzero) {
                    return input("alignment_toy needs nonzero direction vectors");
                }
            }
        }
        Ok(())
    }

    fn entries(&self) -> usize {
        match self {
            RewardSpec::ModeAffinity { targets, .. } => targets.len(),
            RewardSpec::RegionIndicatorSmooth { normals, .. } => normals.len(),
            RewardSpec::AlignmentToy { directions } => directions.len(),
        }
    }

    fn score_entry(&self, i: usize, z: &[f64]) -> f64 {
        match self {
            RewardSpec::ModeAffinity { targets, bandwidth } => {
                let d2: f64 = z.iter().zip(&targets[i]).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2 / (2.0 * bandwidth * bandwidth)).exp()
            }
            RewardSpec::RegionIndicatorSmooth { normals, offsets, bandwidth } => {
                let n = &normals[i];
                let norm = n.iter().map(|v| v * v).sum::<f64>().sqrt();
                let signed = (n.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() - offsets[i]) / norm;
                1.0 / (1.0 + (-signed / bandwidth).exp())
            }
            RewardSpec::AlignmentToy { directions } => {
                let d = &directions[i];
                let zn = z.iter().map(|v| v * v).sum::<f64>().sqrt();
                if zn == 0.0 {
                    return 0.5;
                }
                let dn = d.iter().map(|v| v * v).sum::<f64>().sqrt();
                let cos = d.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() / (zn * dn);
                (0.5 * (1.0 + cos)).clamp(0.0, 1.0)
            }
        }
    }
}

/// Reward `r(z_0, c)` in `[0, 1]`.
pub fn eval_reward(spec: &RewardSpec, z0: &[f64], cond: Condition) -> f64 {
    let n = spec.entries();
    match cond.id() {
        _ if n == 1 => spec.score_entry(0, z0),
        Some(id) if id < n => spec.score_entry(id, z0),
        _ => (0..n).map(|i| spec.score_entry(i, z0)).fold(f64::NEG_INFINITY, f64::max),
    }
}

/// 1 when the base reward strictly exceeds `threshold`, else 0.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryThreshold {
    pub base: RewardSpec,
    pub threshold: f64,
}

pub fn eval_binary(bt: &BinaryThreshold, z0: &[f64], cond: Condition) -> f64 {
    if eval_reward(&bt.base, z0, cond) > bt.threshold {
        1.0
    } else {
        0.0
    }
}

/// A continuous reward or its thresholded version.
#[derive(Debug, Clone, PartialEq)]
pub enum RewardModel {
    Continuous(RewardSpec),
    Binary(BinaryThreshold),
}

impl RewardModel {
    pub fn eval(&self, z0: &[f64], cond: Condition) -> f64 {
        match self {
            RewardModel::Continuous(spec) => eval_reward(spec, z0, cond),
            RewardModel::Binary(bt) => eval_binary(bt, z0, cond),
        }
    }

    pub fn base(&self) -> &RewardSpec {
        match self {
            RewardModel::Continuous(spec) => spec,
            RewardModel::Binary(bt) => &bt.base,
        }
    }
}

impl From<RewardSpec> for RewardModel {
    fn from(spec: RewardSpec) -> Self {
        RewardModel::Continuous(spec)
    }
}

impl From<BinaryThreshold> for RewardModel {
    fn from(bt: BinaryThreshold) -> Self {
        RewardModel::Binary(bt)
    }
}

/// `G × K` matrix: row `i` holds every reward of sample `i`.
pub fn eval_group_rewards<S: AsRef<[f64]>>(models: &[RewardModel], finals: &[S], cond: Condition) -> Vec<Vec<f64>> {
    finals.iter().map(|z| models.iter().map(|m| m.eval(z.as_ref(), cond)).collect()).collect()
}
