//! Interpolant noise schedules `z_t = α_t·x + σ_t·ε` for the two generative
//! paradigms, Gaussian scores, and the map from interpolant coefficients to
//! diffusion SDE coefficients `(f_t, g_t², η_t)`.
//!
//! Time runs from data (`t = 0`) to noise (`t = 1`).

use std::fmt;
use std::str::FromStr;

use crate::error::{input, Error, Result};
use crate::nn::PredictionKind;

/// Endpoint guard for SDE coefficient evaluation. Coefficients are evaluated
/// at `t` clamped into `[T_MIN, 1 - T_MIN]`.
pub const T_MIN: f64 = 1e-3;

pub fn clamp_time(t: f64) -> f64 {
    t.clamp(T_MIN, 1.0 - T_MIN)
}

/// A schedule given by closed-form `α_t`, `σ_t` and their time derivatives.
pub trait Interpolant {
    fn alpha(&self, t: f64) -> f64;
    fn sigma(&self, t: f64) -> f64;
    fn dalpha(&self, t: f64) -> f64;
    fn dsigma(&self, t: f64) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScheduleKind {
    /// `α_t = √(1 − t²)`, `σ_t = t`.
    VpDiffusion,
    /// `α_t = 1 − t`, `σ_t = t`.
    RectifiedFlow,
}

impl ScheduleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScheduleKind::VpDiffusion => "vp_diffusion",
            ScheduleKind::RectifiedFlow => "rectified_flow",
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vp_diffusion" => Ok(ScheduleKind::VpDiffusion),
            "rectified_flow" => Ok(ScheduleKind::RectifiedFlow),
            other => input(format!("unknown schedule '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
}

impl NoiseSchedule {
    pub fn new(kind: ScheduleKind) -> Self {
        Self { kind }
    }

    pub fn rectified_flow() -> Self {
        Self::new(ScheduleKind::RectifiedFlow)
    }

    pub fn vp_diffusion() -> Self {
        Self::new(ScheduleKind::VpDiffusion)
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }
}

impl Interpolant for NoiseSchedule {
    fn alpha(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::VpDiffusion => (1.0 - t * t).max(0.0).sqrt(),
            ScheduleKind::RectifiedFlow => 1.0 - t,
        }
    }

    fn sigma(&self, t: f64) -> f64 {
        t
    }

    fn dalpha(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::VpDiffusion => -t / (1.0 - t * t).sqrt(),
            ScheduleKind::RectifiedFlow => -1.0,
        }
    }

    fn dsigma(&self, _t: f64) -> f64 {
        1.0
    }
}

/// Diffusion SDE coefficients matched to an interpolant at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdeCoeffs {
    pub f: f64,
    pub g2: f64,
    pub eta: f64,
}

fn check_time(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) || t.is_nan() {
        return input(format!("time {t} outside [0, 1]"));
    }
    Ok(())
}

/// `α_t·x + σ_t·noise`.
pub fn forward_marginal<S: Interpolant + ?Sized>(sched: &S, x: &[f64], t: f64, noise: &[f64]) -> Result<Vec<f64>> {
    check_time(t)?;
    if x.len() != noise.len() {
        return input(format!("data has dimension {}, noise {}", x.len(), noise.len()));
    }
    let (a, s) = (sched.alpha(t), sched.sigma(t));
    Ok(x.iter().zip(noise).map(|(x, e)| a * x + s * e).collect())
}

/// Score of `N(α_t·x, σ_t²·I)` at `z`: `−(z − α_t·x)/σ_t²`.
pub fn gaussian_score<S: Interpolant + ?Sized>(sched: &S, z: &[f64], x: &[f64], t: f64) -> Result<Vec<f64>> {
    check_time(t)?;
    if z.len() != x.len() {
        return input("state and data dimensions differ");
    }
    let s = sched.sigma(t);
    if s <= 0.0 {
        return Err(Error::Singularity(format!("σ_t = {s} at t = {t}")));
    }
    let a = sched.alpha(t);
    let s2 = s * s;
    Ok(z.iter().zip(x).map(|(z, x)| -(z - a * x) / s2).collect())
}

/// Scalars `(zc, pc)` such that a derived quantity equals `zc·z + pc·pred`
/// componentwise. Every estimate recovered from a network prediction is
/// affine in that prediction with scalar coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub z: f64,
    pub pred: f64,
}

impl Affine {
    pub fn apply(&self, z: &[f64], pred: &[f64]) -> Vec<f64> {
        z.iter().zip(pred).map(|(z, p)| self.z * z + self.pred * p).collect()
    }

    fn scale(self, k: f64) -> Self {
        Affine { z: self.z * k, pred: self.pred * k }
    }

    fn add(self, o: Self) -> Self {
        Affine { z: self.z + o.z, pred: self.pred + o.pred }
    }
}

/// How the data estimate, noise estimate, velocity and score depend on the
/// network output at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionMap {
    pub x_hat: Affine,
    pub eps_hat: Affine,
    pub velocity: Affine,
    pub score: Affine,
}

/// Builds the [`PredictionMap`] at time `t` exactly as given (no clamping).
pub fn prediction_map<S: Interpolant + ?Sized>(sched: &S, kind: PredictionKind, t: f64) -> Result<PredictionMap> {
    let (a, s, da, ds) = (sched.alpha(t), sched.sigma(t), sched.dalpha(t), sched.dsigma(t));
    if s <= 0.0 {
        return Err(Error::Singularity(format!("σ_t = {s} at t = {t}")));
    }
    let ident = Affine { z: 0.0, pred: 1.0 };
    match kind {
        PredictionKind::Epsilon => {
            if a <= 0.0 {
                return Err(Error::Singularity(format!("α_t = {a} at t = {t}; cannot invert for x̂")));
            }
            let eps_hat = ident;
            let x_hat = Affine { z: 1.0 / a, pred: -s / a };
            let velocity = x_hat.scale(da).add(eps_hat.scale(ds));
            let score = Affine { z: 0.0, pred: -1.0 / s };
            Ok(PredictionMap { x_hat, eps_hat, velocity, score })
        }
        PredictionKind::Velocity => {
            // solve z = a·x + s·ε, u = da·x + ds·ε
            let det = ds * a - s * da;
            if det.abs() < f64::MIN_POSITIVE {
                return Err(Error::Singularity(format!("velocity is not invertible at t = {t}")));
            }
            let x_hat = Affine { z: ds / det, pred: -s / det };
            let eps_hat = Affine { z: -da / det, pred: a / det };
            let s2 = s * s;
            let score = Affine { z: -(1.0 - a * x_hat.z) / s2, pred: a * x_hat.pred / s2 };
            Ok(PredictionMap { x_hat, eps_hat, velocity: ident, score })
        }
    }
}

/// Score implied by a network prediction: `−ε̂/σ_t` for noise prediction,
/// `−(z − α_t·x̂)/σ_t²` with `x̂` recovered from the velocity otherwise.
pub fn score_from_prediction<S: Interpolant + ?Sized>(
    sched: &S,
    kind: PredictionKind,
    pred: &[f64],
    z: &[f64],
    t: f64,
) -> Result<Vec<f64>> {
    check_time(t)?;
    if pred.len() != z.len() {
        return input("prediction and state dimensions differ");
    }
    let s = sched.sigma(t);
    if s <= 0.0 {
        return Err(Error::Singularity(format!("σ_t = {s} at t = {t}")));
    }
    match kind {
        PredictionKind::Epsilon => Ok(pred.iter().map(|p| -p / s).collect()),
        PredictionKind::Velocity => {
            let map = prediction_map(sched, kind, t)?;
            let x_hat = map.x_hat.apply(z, pred);
            gaussian_score(sched, z, &x_hat, t)
        }
    }
}

/// `f_t = ∂_t log α_t`, `g_t² = 2·α_t·σ_t·∂_t(σ_t/α_t)`, `η_t = ε_t/√g_t²`,
/// evaluated at `t` clamped into `[T_MIN, 1 − T_MIN]`.
pub fn interpolant_to_sde<S: Interpolant + ?Sized>(sched: &S, t: f64, eps_level: f64) -> Result<SdeCoeffs> {
    check_time(t)?;
    if eps_level < 0.0 || !eps_level.is_finite() {
        return input(format!("noise level {eps_level} must be finite and nonnegative"));
    }
    let t = clamp_time(t);
    let (a, s, da, ds) = (sched.alpha(t), sched.sigma(t), sched.dalpha(t), sched.dsigma(t));
    if a <= 0.0 {
        return Err(Error::Singularity(format!("α_t = {a} at t = {t}")));
    }
    let f = da / a;
    // ∂_t(σ/α) = (α·σ' − α'·σ)/α²
    let g2 = 2.0 * a * s * (a * ds - da * s) / (a * a);
    let eta = if eps_level == 0.0 {
        0.0
    } else if g2 <= 0.0 {
        return Err(Error::Singularity(format!("g_t² = {g2} at t = {t}; η_t undefined")));
    } else {
        eps_level / g2.sqrt()
    };
    Ok(SdeCoeffs { f, g2, eta })
}
