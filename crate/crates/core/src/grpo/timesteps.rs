use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{input, Error, Result};

/// Which transitions of a trajectory receive gradient updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TimestepMode {
    /// The earliest transitions, starting from noise.
    FirstFraction,
    RandomFraction,
    /// The transitions closest to the output.
    LastFraction,
}

impl TimestepMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TimestepMode::FirstFraction => "first",
            TimestepMode::RandomFraction => "random",
            TimestepMode::LastFraction => "last",
        }
    }
}

impl fmt::Display for TimestepMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TimestepMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first" | "first_fraction" => Ok(TimestepMode::FirstFraction),
            "random" | "random_fraction" => Ok(TimestepMode::RandomFraction),
            "last" | "last_fraction" => Ok(TimestepMode::LastFraction),
            other => input(format!("unknown timestep mode '{other}'")),
        }
    }
}

fn count(n: usize, frac: f64) -> usize {
    // guard against 0.6 * 50 = 30.000000000000004 rounding up
    let raw = frac * n as f64;
    let nearest = raw.round();
    let k = if (raw - nearest).abs() < 1e-9 { nearest } else { raw.ceil() };
    (k as usize).clamp(1, n)
}

/// `⌈τ·|eligible|⌉` distinct entries of `eligible`, uniformly at random,
/// sorted ascending.
pub fn subsample_eligible<R: Rng + ?Sized>(eligible: &[usize], tau: f64, rng: &mut R) -> Result<Vec<usize>> {
    if !(tau > 0.0 && tau <= 1.0) {
        return input(format!("timestep ratio {tau} must lie in (0, 1]"));
    }
    if eligible.is_empty() {
        return Ok(Vec::new());
    }
    if tau == 1.0 {
        return Ok(eligible.to_vec());
    }
    let k = count(eligible.len(), tau);
    let mut picked: Vec<usize> = sample(rng, eligible.len(), k).into_iter().map(|i| eligible[i]).collect();
    picked.sort_unstable();
    Ok(picked)
}

/// `⌈τ·T⌉` distinct indices of `0..T`, sorted ascending.
pub fn subsample_timesteps<R: Rng + ?Sized>(steps: usize, tau: f64, rng: &mut R) -> Result<Vec<usize>> {
    let all: Vec<usize> = (0..steps).collect();
    subsample_eligible(&all, tau, rng)
}

/// Contiguous head, contiguous tail, or random subset of `0..T` covering
/// `frac` of the steps.
pub fn subsample_strategy<R: Rng + ?Sized>(steps: usize, mode: TimestepMode, frac: f64, rng: &mut R) -> Result<Vec<usize>> {
    if !(frac > 0.0 && frac <= 1.0) {
        return input(format!("fraction {frac} must lie in (0, 1]"));
    }
    if steps == 0 {
        return Ok(Vec::new());
    }
    let k = count(steps, frac);
    Ok(match mode {
        TimestepMode::FirstFraction => (0..k).collect(),
        TimestepMode::LastFraction => (steps - k..steps).collect(),
        TimestepMode::RandomFraction => subsample_timesteps(steps, frac, rng)?,
    })
}
