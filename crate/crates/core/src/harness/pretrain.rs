//! Regression pretraining of the denoiser on the toy mixture: predict the
//! noise or the velocity of the forward interpolant from `(z_t, t, c)`.
//!
//! Conditions are drawn uniformly and independently of the data, so the
//! pretrained model samples the whole mixture whatever the condition.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::ExperimentConfig;
use super::data::GaussianMixture;
use crate::error::{Error, Result};
use crate::nn::{Condition, DenoiserNet, OptimizerState, PredictionKind};
use crate::schedules::{Interpolant, NoiseSchedule, T_MIN};

/// One regression example.
#[derive(Debug, Clone)]
pub struct RegressionExample {
    pub z: Vec<f64>,
    pub t: f64,
    pub cond: Condition,
    pub target: Vec<f64>,
}

pub fn draw_example<R: Rng + ?Sized>(
    sched: &NoiseSchedule,
    kind: PredictionKind,
    data: &GaussianMixture,
    condition_count: usize,
    rng: &mut R,
) -> RegressionExample {
    let x = data.sample(rng);
    let eps: Vec<f64> = (0..x.len()).map(|_| rng.sample(StandardNormal)).collect();
    let t = rng.gen_range(T_MIN..1.0 - T_MIN);
    let cond = if condition_count == 0 { Condition::NULL } else { Condition::new(rng.gen_range(0..condition_count)) };
    let (a, s) = (sched.alpha(t), sched.sigma(t));
    let z = x.iter().zip(&eps).map(|(x, e)| a * x + s * e).collect();
    let target = match kind {
        PredictionKind::Epsilon => eps,
        PredictionKind::Velocity => {
            let (da, ds) = (sched.dalpha(t), sched.dsigma(t));
            x.iter().zip(&eps).map(|(x, e)| da * x + ds * e).collect()
        }
    };
    RegressionExample { z, t, cond, target }
}

/// Mean over examples of the per-coordinate squared error.
pub fn regression_loss(net: &DenoiserNet, examples: &[RegressionExample]) -> Result<f64> {
    let mut total = 0.0;
    for ex in examples {
        let pred = net.forward(&ex.z, ex.t, ex.cond)?;
        total += pred.iter().zip(&ex.target).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / pred.len() as f64;
    }
    Ok(total / examples.len() as f64)
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    /// Parameters with the best validation loss seen.
    pub net: DenoiserNet,
    pub steps_run: usize,
    /// `(step, validation loss)` at every evaluation.
    pub val_history: Vec<(usize, f64)>,
}

/// Trains from the seed-derived initialization until the validation loss
/// stops improving or `pretrain.steps` is reached.
pub fn pretrain(cfg: &ExperimentConfig) -> Result<PretrainOutcome> {
    cfg.validate()?;
    let data = GaussianMixture::new(cfg.data.clone())?;
    let sched = cfg.sched();
    let spec = cfg.net_spec();
    let kind = spec.kind;
    let mut net = DenoiserNet::new(spec, cfg.seed)?;
    let p = &cfg.pretrain;

    let mut val_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    val_rng.set_stream(1);
    let val: Vec<RegressionExample> =
        (0..p.val_size).map(|_| draw_example(&sched, kind, &data, cfg.condition_count, &mut val_rng)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);

    let mut opt = OptimizerState::new(net.param_count(), p.learning_rate);
    let mut best = (regression_loss(&net, &val)?, net.clone());
    let mut val_history = vec![(0, best.0)];
    let mut stale = 0;
    let mut steps_run = 0;
    let scale = 2.0 / (p.batch * net.input_dim()) as f64;
    let mut upstream = vec![0.0; net.input_dim()];

    while steps_run < p.steps {
        for _ in 0..p.batch {
            let ex = draw_example(&sched, kind, &data, cfg.condition_count, &mut rng);
            let (pred, tape) = net.forward_with_tape(&ex.z, ex.t, ex.cond)?;
            for ((u, p), y) in upstream.iter_mut().zip(&pred).zip(&ex.target) {
                *u = scale * (p - y);
            }
            net.backward(&tape, &upstream)?;
        }
        opt.step(net.params_mut(), f64::INFINITY).map_err(|e| Error::TrainingAborted {
            iteration: steps_run,
            reason: e.to_string(),
        })?;
        steps_run += 1;

        if steps_run % p.eval_every == 0 || steps_run == p.steps {
            let loss = regression_loss(&net, &val)?;
            if !loss.is_finite() {
                return Err(Error::TrainingAborted { iteration: steps_run, reason: format!("validation loss is {loss}") });
            }
            val_history.push((steps_run, loss));
            if loss < best.0 * (1.0 - 1e-3) {
                best = (loss, net.clone());
                stale = 0;
            } else {
                stale += 1;
                if stale >= p.patience {
                    break;
                }
            }
        }
    }
    Ok(PretrainOutcome { net: best.1, steps_run, val_history })
}
