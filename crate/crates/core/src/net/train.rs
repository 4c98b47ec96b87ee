//! Gradient-ascent training of a network on one window of days.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::grad::{full_gradient, TrainingDay};
use super::{NetError, NetworkParams, TrainConfig};
use crate::risk::RiskBudgetSolver;

/// Step size after `step` updates: `eta · 0.9^⌊step/3⌋`.
pub fn learning_rate(eta: f64, step: usize) -> f64 {
    eta * 0.9f64.powi((step / 3) as i32)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    /// Objective evaluated before each update.
    pub objective_trace: Vec<f64>,
}

/// Runs `cfg.steps` full-window ascent steps from `init`. Gate noise for each
/// step is drawn from a generator seeded with `cfg.seed`.
pub fn train(
    days: &[TrainingDay],
    cfg: &TrainConfig,
    init: &NetworkParams,
    solver: &RiskBudgetSolver,
) -> Result<TrainOutcome, NetError> {
    cfg.validate()?;
    init.check_shapes()?;
    if cfg.architecture.is_gated() != init.mu.is_some() {
        return Err(NetError::InvalidConfig(
            "gate parameters must be present exactly for gated architectures".into(),
        ));
    }
    let mut params = init.clone();
    let mut trace = Vec::with_capacity(cfg.steps);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = params.n_assets();
    for step in 0..cfg.steps {
        let noise = cfg.architecture.is_gated().then(|| {
            DVector::from_fn(n, |_, _| {
                cfg.gate_sigma
                    * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
            })
        });
        let (value, grad) = full_gradient(
            &params,
            days,
            cfg.architecture,
            cfg.objective,
            noise.as_ref(),
            solver,
        )?;
        if !value.is_finite() || !grad.is_finite() {
            return Err(NetError::NonFinite { step });
        }
        trace.push(value);
        let lr = learning_rate(cfg.eta, step);
        let lr_mu = learning_rate(cfg.eta_mu, step);
        params.ascend(&grad, lr, lr_mu);
        if !params.is_finite() {
            return Err(NetError::NonFinite { step });
        }
    }
    Ok(TrainOutcome {
        params,
        objective_trace: trace,
    })
}
