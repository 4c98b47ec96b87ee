//! Stochastic asset gates. During training each gate is `clamp(μ + ε, 0, 1)`
//! with Gaussian ε; at inference a gate is open iff μ ≥ 0.5. Gate values scale
//! the risk budget, which is then renormalized.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::NetError;
use crate::risk::{CovMatrix, RiskBudget};

pub const GATE_THRESHOLD: f64 = 0.5;

/// Budget assigned to a fully closed gate when closed assets stay in the universe.
pub const ZERO_BUDGET_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateFilter {
    /// Closed assets are removed: the solver sees only the open sub-universe.
    WithFilter,
    /// Closed assets keep a floored budget on the full covariance.
    NoFilter,
}

pub fn hard_gates(mu: &DVector<f64>) -> DVector<f64> {
    mu.map(|m| if m >= GATE_THRESHOLD { 1.0 } else { 0.0 })
}

pub fn soft_gates(mu: &DVector<f64>, noise: &DVector<f64>) -> DVector<f64> {
    mu.zip_map(noise, |m, e| (m + e).clamp(0.0, 1.0))
}

/// Gate values: noisy and clamped when `training`, thresholded otherwise.
pub fn gate_values(mu: &DVector<f64>, sigma: f64, training: bool, seed: u64) -> DVector<f64> {
    if !training {
        return hard_gates(mu);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = DVector::from_fn(mu.len(), |_, _| {
        sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
    });
    soft_gates(mu, &noise)
}

/// A gated budget ready for the solver, plus what the backward pass needs.
#[derive(Debug, Clone)]
pub struct GatedBudget {
    /// Renormalized budget on `active`.
    pub budget: RiskBudget,
    /// Covariance seen by the solver (a sub-block when filtering).
    pub cov: CovMatrix,
    /// Asset indices the solver allocates over, ascending.
    pub active: Vec<usize>,
    floored: Vec<bool>,
    total: f64,
}

pub fn apply_gates(
    budget: &RiskBudget,
    gates: &DVector<f64>,
    filter: GateFilter,
    cov: &CovMatrix,
) -> Result<GatedBudget, NetError> {
    let n = budget.len();
    if gates.len() != n || cov.dim() != n {
        return Err(NetError::Dimension(format!(
            "{} gates, {}-asset budget, {}-asset covariance",
            gates.len(),
            n,
            cov.dim()
        )));
    }
    if gates.iter().any(|g| !(0.0..=1.0).contains(g)) {
        return Err(NetError::Dimension("gate values must lie in [0, 1]".into()));
    }
    if gates.iter().all(|g| *g == 0.0) {
        return Err(NetError::DegenerateSelection);
    }
    if gates.iter().all(|g| *g == 1.0) {
        return Ok(GatedBudget {
            budget: budget.clone(),
            cov: cov.clone(),
            active: (0..n).collect(),
            floored: vec![false; n],
            total: 1.0,
        });
    }
    let b = budget.as_vector();
    let active: Vec<usize> = match filter {
        GateFilter::WithFilter => (0..n).filter(|&i| gates[i] > 0.0).collect(),
        GateFilter::NoFilter => (0..n).collect(),
    };
    let mut floored = vec![false; active.len()];
    let scaled = DVector::from_iterator(
        active.len(),
        active.iter().enumerate().map(|(k, &i)| {
            let u = b[i] * gates[i];
            if u == 0.0 {
                floored[k] = true;
                ZERO_BUDGET_FLOOR
            } else {
                u
            }
        }),
    );
    let total = scaled.sum();
    let gated_cov = if active.len() == n {
        cov.clone()
    } else {
        cov.sub_block(&active)
    };
    Ok(GatedBudget {
        budget: RiskBudget::new(scaled / total)?,
        cov: gated_cov,
        active,
        floored,
        total,
    })
}

impl GatedBudget {
    /// Pulls a gradient on the gated budget back to the raw budget and the gate
    /// values. Returns `(∂/∂b, ∂/∂g)`, both of full length.
    pub fn backward(
        &self,
        budget: &DVector<f64>,
        gates: &DVector<f64>,
        grad_gated: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>) {
        let n = budget.len();
        let bp = self.budget.as_vector();
        let proj = bp.dot(grad_gated);
        let mut grad_b = DVector::zeros(n);
        let mut grad_g = DVector::zeros(n);
        for (k, &i) in self.active.iter().enumerate() {
            if self.floored[k] {
                continue;
            }
            let gu = (grad_gated[k] - proj) / self.total;
            grad_b[i] = gu * gates[i];
            grad_g[i] = gu * budget[i];
        }
        (grad_b, grad_g)
    }
}
