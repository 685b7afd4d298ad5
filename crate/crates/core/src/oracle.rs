//! Analytic reference quantities used to check the numerical code.
//!
//! For isotropic Gaussian data `x ~ N(m, c·I)` every marginal of the
//! interpolant is Gaussian, so the score and the posterior-mean predictions
//! are available in closed form.

use crate::error::{input, Error, Result};
use crate::nn::{Condition, PredictionKind};
use crate::samplers::Predictor;
use crate::schedules::{clamp_time, Interpolant, NoiseSchedule};

/// Isotropic Gaussian data distribution `N(mean, cov_scale·I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDataOracle {
    pub mean: Vec<f64>,
    pub cov_scale: f64,
}

impl GaussianDataOracle {
    pub fn new(mean: Vec<f64>, cov_scale: f64) -> Result<Self> {
        if mean.is_empty() || !(cov_scale >= 0.0) || !cov_scale.is_finite() {
            return input("oracle needs a nonempty mean and a finite nonnegative covariance scale");
        }
        Ok(Self { mean, cov_scale })
    }

    pub fn standard(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], cov_scale: 1.0 }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn marginal_var<S: Interpolant + ?Sized>(&self, sched: &S, t: f64) -> Result<(f64, f64)> {
        let (a, s) = (sched.alpha(t), sched.sigma(t));
        let v = a * a * self.cov_scale + s * s;
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::Singularity(format!("degenerate marginal variance {v} at t = {t}")));
        }
        Ok((a, v))
    }

    fn check_dim(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.dim() {
            return input(format!("state has dimension {}, oracle {}", z.len(), self.dim()));
        }
        Ok(())
    }

    /// `∇ log p_t(z) = −(z − α_t·m)/(α_t²·c + σ_t²)`.
    pub fn score<S: Interpolant + ?Sized>(&self, sched: &S, z: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_dim(z)?;
        let (a, v) = self.marginal_var(sched, t)?;
        Ok(z.iter().zip(&self.mean).map(|(z, m)| -(z - a * m) / v).collect())
    }

    /// `E[x | z_t]`.
    pub fn posterior_x<S: Interpolant + ?Sized>(&self, sched: &S, z: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_dim(z)?;
        let (a, v) = self.marginal_var(sched, t)?;
        let k = a * self.cov_scale / v;
        Ok(z.iter().zip(&self.mean).map(|(z, m)| m + k * (z - a * m)).collect())
    }

    /// `E[ε | z_t]`.
    pub fn posterior_eps<S: Interpolant + ?Sized>(&self, sched: &S, z: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_dim(z)?;
        let (a, v) = self.marginal_var(sched, t)?;
        let k = sched.sigma(t) / v;
        Ok(z.iter().zip(&self.mean).map(|(z, m)| k * (z - a * m)).collect())
    }

    /// `E[α'_t·x + σ'_t·ε | z_t]`.
    pub fn posterior_velocity<S: Interpolant + ?Sized>(&self, sched: &S, z: &[f64], t: f64) -> Result<Vec<f64>> {
        let x = self.posterior_x(sched, z, t)?;
        let e = self.posterior_eps(sched, z, t)?;
        let (da, ds) = (sched.dalpha(t), sched.dsigma(t));
        Ok(x.iter().zip(&e).map(|(x, e)| da * x + ds * e).collect())
    }
}

/// The Bayes-optimal denoiser for [`GaussianDataOracle`] data, usable
/// wherever a network is expected. Times are clamped like the samplers'
/// coefficients so that both see the same `t`.
#[derive(Debug, Clone)]
pub struct OraclePredictor {
    pub data: GaussianDataOracle,
    pub sched: NoiseSchedule,
    pub kind: PredictionKind,
}

impl Predictor for OraclePredictor {
    fn kind(&self) -> PredictionKind {
        self.kind
    }

    fn dim(&self) -> usize {
        self.data.dim()
    }

    fn predict(&self, z: &[f64], t: f64, _cond: Condition) -> Result<Vec<f64>> {
        let t = clamp_time(t);
        match self.kind {
            PredictionKind::Epsilon => self.data.posterior_eps(&self.sched, z, t),
            PredictionKind::Velocity => self.data.posterior_velocity(&self.sched, z, t),
        }
    }
}

/// Central finite-difference gradient of `loss` at `params`.
pub fn finite_diff_grad<F>(mut loss: F, params: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(h > 0.0) {
        return input("finite-difference step must be positive");
    }
    let mut p = params.to_vec();
    let mut grad = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let up = loss(&p)?;
        p[i] = orig - h;
        let down = loss(&p)?;
        p[i] = orig;
        let g = (up - down) / (2.0 * h);
        if !g.is_finite() {
            return Err(Error::Numerical(format!("finite difference for parameter {i} is {g}")));
        }
        grad.push(g);
    }
    Ok(grad)
}

/// Per-dimension sample mean and Bessel-corrected variance.
pub fn sample_moments<S: AsRef<[f64]>>(samples: &[S]) -> Result<(Vec<f64>, Vec<f64>)> {
    if samples.len() < 2 {
        return input("need at least two samples");
    }
    let d = samples[0].as_ref().len();
    if samples.iter().any(|s| s.as_ref().len() != d) {
        return input("samples have differing dimensions");
    }
    let n = samples.len() as f64;
    let mut mean = vec![0.0; d];
    for s in samples {
        for (m, x) in mean.iter_mut().zip(s.as_ref()) {
            *m += x / n;
        }
    }
    let mut var = vec![0.0; d];
    for s in samples {
        for ((v, x), m) in var.iter_mut().zip(s.as_ref()).zip(&mean) {
            *v += (x - m) * (x - m) / (n - 1.0);
        }
    }
    Ok((mean, var))
}

/// `max |a − b| / max(|b|, floor)` over paired entries.
pub fn max_rel_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter().zip(b).map(|(a, b)| (a - b).abs() / b.abs().max(floor)).fold(0.0, f64::max)
}

/// Outcome of one named numerical check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub details: String,
}

impl CheckReport {
    /// Passes when `measured <= tolerance`.
    pub fn at_most(name: impl Into<String>, measured: f64, tolerance: f64, details: impl Into<String>) -> Self {
        Self { name: name.into(), passed: measured <= tolerance, measured, tolerance, details: details.into() }
    }

    pub fn failed(name: impl Into<String>, details: impl Into<String>) -> Self {
        Self { name: name.into(), passed: false, measured: f64::NAN, tolerance: f64::NAN, details: details.into() }
    }
}

impl std::fmt::Display for CheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: measured {:.3e} (tol {:.1e})", self.name, self.measured, self.tolerance)?;
        if !self.details.is_empty() {
            write!(f, " {}", self.details)?;
        }
        Ok(())
    }
}
