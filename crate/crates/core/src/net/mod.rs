//! End-to-end networks: a one-hidden-layer perceptron whose softmax head is
//! either the allocation itself (model-free) or a risk budget fed through the
//! risk-budget solver (model-based), optionally followed by stochastic gates.

mod checkpoint;
mod gates;
mod grad;
mod objective;
mod train;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{FeatureVector, FEATURES_PER_ASSET};
use crate::risk::{Allocation, CovMatrix, RiskBudget, RiskBudgetSolver, RiskError};

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use gates::{
    apply_gates, gate_values, hard_gates, soft_gates, GateFilter, GatedBudget, GATE_THRESHOLD,
    ZERO_BUDGET_FLOOR,
};
pub use grad::{full_gradient, objective_value, TrainingDay};
pub use objective::{objective_eval, RiskReward};
pub use train::{learning_rate, train, TrainOutcome};

/// Slope of the leaky ReLU on the negative side.
pub const LEAKY_SLOPE: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error("all gates are closed; no asset left to allocate")]
    DegenerateSelection,
    #[error("objective needs at least {needed} returns, got {got}")]
    TooFewReturns { needed: usize, got: usize },
    #[error("portfolio returns have zero standard deviation; Sharpe ratio undefined")]
    ZeroVolatility,
    #[error("non-finite objective or gradient at training step {step}")]
    NonFinite { step: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

/// Training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Per-period mean over sample standard deviation.
    Sharpe,
    /// Compounded growth Πₜ(1 + rₜ).
    CumReturn,
}

/// Network variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    ModelFree,
    ModelBased,
    GatedFilter,
    GatedNoFilter,
}

impl Architecture {
    pub fn is_gated(self) -> bool {
        matches!(self, Self::GatedFilter | Self::GatedNoFilter)
    }

    pub fn gate_filter(self) -> Option<GateFilter> {
        match self {
            Self::GatedFilter => Some(GateFilter::WithFilter),
            Self::GatedNoFilter => Some(GateFilter::NoFilter),
            _ => None,
        }
    }
}

/// Hyperparameters of the rolling training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: usize,
    /// Learning rate for the perceptron weights.
    pub eta: f64,
    /// Learning rate for the gate openness parameters.
    pub eta_mu: f64,
    pub steps: usize,
    /// Training window length in days.
    pub lookback: usize,
    /// Days between retrainings.
    pub retrain_every: usize,
    pub objective: Objective,
    pub architecture: Architecture,
    /// Standard deviation of the gate noise during training.
    pub gate_sigma: f64,
    /// Initial gate openness.
    pub gate_init: f64,
    pub seed: u64,
    /// Start each retraining from the previous window's parameters.
    pub warm_start: bool,
    /// Multiplier applied to every feature before it enters the network.
    pub feature_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            eta: 10.0,
            eta_mu: 10.0,
            steps: 50,
            lookback: 150,
            retrain_every: 5,
            objective: Objective::Sharpe,
            architecture: Architecture::ModelBased,
            gate_sigma: 0.1,
            gate_init: 0.5,
            seed: 0,
            warm_start: true,
            feature_scale: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: &str| Err(NetError::InvalidConfig(m.to_owned()));
        if self.hidden == 0 || self.lookback == 0 || self.retrain_every == 0 {
            return bad("hidden, lookback and retrain_every must be positive");
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return bad("eta must be positive");
        }
        if !(self.eta_mu.is_finite() && self.eta_mu >= 0.0) {
            return bad("eta_mu must be nonnegative");
        }
        if !(self.gate_sigma.is_finite() && self.gate_sigma >= 0.0) {
            return bad("gate_sigma must be nonnegative");
        }
        if !(self.feature_scale.is_finite() && self.feature_scale > 0.0) {
            return bad("feature_scale must be positive");
        }
        Ok(())
    }
}

/// Perceptron weights and, for gated variants, the gate openness μ.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
    pub mu: Option<DVector<f64>>,
}

impl NetworkParams {
    /// Uniform `[−1/√fan_in, 1/√fan_in]` initialization; gates start at `gate_init`.
    pub fn init(n_assets: usize, hidden: usize, gated: bool, gate_init: f64, seed: u64) -> Self {
        let input = FEATURES_PER_ASSET * n_assets;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b_in = 1.0 / (input as f64).sqrt();
        let b_hidden = 1.0 / (hidden as f64).sqrt();
        let w1 = DMatrix::from_fn(hidden, input, |_, _| rng.random_range(-b_in..=b_in));
        let b1 = DVector::from_fn(hidden, |_, _| rng.random_range(-b_in..=b_in));
        let w2 = DMatrix::from_fn(n_assets, hidden, |_, _| {
            rng.random_range(-b_hidden..=b_hidden)
        });
        let b2 = DVector::from_fn(n_assets, |_, _| rng.random_range(-b_hidden..=b_hidden));
        Self {
            w1,
            b1,
            w2,
            b2,
            mu: gated.then(|| DVector::from_element(n_assets, gate_init)),
        }
    }

    pub fn zeros(n_assets: usize, hidden: usize, gated: bool) -> Self {
        Self {
            w1: DMatrix::zeros(hidden, FEATURES_PER_ASSET * n_assets),
            b1: DVector::zeros(hidden),
            w2: DMatrix::zeros(n_assets, hidden),
            b2: DVector::zeros(n_assets),
            mu: gated.then(|| DVector::zeros(n_assets)),
        }
    }

    /// Zeros with the same shapes as `self`.
    pub fn zeros_like(&self) -> Self {
        Self {
            w1: DMatrix::zeros(self.w1.nrows(), self.w1.ncols()),
            b1: DVector::zeros(self.b1.len()),
            w2: DMatrix::zeros(self.w2.nrows(), self.w2.ncols()),
            b2: DVector::zeros(self.b2.len()),
            mu: self.mu.as_ref().map(|m| DVector::zeros(m.len())),
        }
    }

    pub fn n_assets(&self) -> usize {
        self.b2.len()
    }

    pub fn hidden(&self) -> usize {
        self.b1.len()
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn check_shapes(&self) -> Result<(), NetError> {
        let (h, n) = (self.hidden(), self.n_assets());
        let ok = self.w1.nrows() == h
            && self.w2.nrows() == n
            && self.w2.ncols() == h
            && self.mu.as_ref().is_none_or(|m| m.len() == n);
        if !ok {
            return Err(NetError::Dimension(format!(
                "inconsistent parameter shapes: w1 {}x{}, b1 {}, w2 {}x{}, b2 {}",
                self.w1.nrows(),
                self.w1.ncols(),
                h,
                self.w2.nrows(),
                self.w2.ncols(),
                n
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(f64::is_finite)
    }

    /// All scalars in a fixed order: w1 (column-major), b1, w2, b2, mu.
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.w1
            .iter()
            .chain(self.b1.iter())
            .chain(self.w2.iter())
            .chain(self.b2.iter())
            .chain(self.mu.iter().flat_map(|m| m.iter()))
            .copied()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.w1
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
            .chain(self.b2.iter_mut())
            .chain(self.mu.iter_mut().flat_map(|m| m.iter_mut()))
    }

    pub fn len(&self) -> usize {
        self.iter().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `self += lr · grad` on the perceptron and `self.mu += lr_mu · grad.mu`.
    pub fn ascend(&mut self, grad: &NetworkParams, lr: f64, lr_mu: f64) {
        self.w1 += &grad.w1 * lr;
        self.b1 += &grad.b1 * lr;
        self.w2 += &grad.w2 * lr;
        self.b2 += &grad.b2 * lr;
        if let (Some(mu), Some(g)) = (self.mu.as_mut(), grad.mu.as_ref()) {
            *mu += g * lr_mu;
        }
    }
}

pub(crate) fn leaky_relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

pub(crate) fn leaky_relu_slope(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

pub fn softmax(logits: &DVector<f64>) -> DVector<f64> {
    let max = logits.max();
    let e = logits.map(|v| (v - max).exp());
    let s = e.sum();
    e / s
}

/// Hidden activations and head output of one forward pass.
#[derive(Debug, Clone)]
pub(crate) struct Activations {
    pub pre: DVector<f64>,
    pub act: DVector<f64>,
    pub probs: DVector<f64>,
}

pub(crate) fn perceptron(
    params: &NetworkParams,
    x: &DVector<f64>,
) -> Result<Activations, NetError> {
    if x.len() != params.input_dim() {
        return Err(NetError::Dimension(format!(
            "feature vector has length {}, network expects {}",
            x.len(),
            params.input_dim()
        )));
    }
    let pre = &params.w1 * x + &params.b1;
    let act = pre.map(leaky_relu);
    let logits = &params.w2 * &act + &params.b2;
    Ok(Activations {
        pre,
        act,
        probs: softmax(&logits),
    })
}

/// Risk budget `softmax(W2 · leakyReLU(W1 x + b1) + b2)`.
pub fn forward_budget(params: &NetworkParams, x: &FeatureVector) -> Result<RiskBudget, NetError> {
    let a = perceptron(params, &x.values)?;
    Ok(RiskBudget::new(a.probs)?)
}

/// Model-free head: the softmax output is the allocation.
pub fn forward_alloc_model_free(
    params: &NetworkParams,
    x: &FeatureVector,
) -> Result<Allocation, NetError> {
    let a = perceptron(params, &x.values)?;
    Ok(Allocation::new(a.probs)?)
}

/// Result of an inference-time allocation.
#[derive(Debug, Clone)]
pub struct Decision {
    pub allocation: Allocation,
    pub budget: Option<RiskBudget>,
    /// Hard gate values (1 open, 0 closed) for gated variants.
    pub gates: Option<DVector<f64>>,
}

/// Inference-time allocation: gates are thresholded at 0.5.
pub fn allocate(
    params: &NetworkParams,
    architecture: Architecture,
    x: &FeatureVector,
    cov: &CovMatrix,
    solver: &RiskBudgetSolver,
) -> Result<Decision, NetError> {
    if architecture == Architecture::ModelFree {
        return Ok(Decision {
            allocation: forward_alloc_model_free(params, x)?,
            budget: None,
            gates: None,
        });
    }
    let budget = forward_budget(params, x)?;
    if cov.dim() != budget.len() {
        return Err(NetError::Dimension(format!(
            "{}-asset covariance for a {}-asset network",
            cov.dim(),
            budget.len()
        )));
    }
    match architecture.gate_filter() {
        None => Ok(Decision {
            allocation: solver.solve(cov, &budget)?,
            budget: Some(budget),
            gates: None,
        }),
        Some(filter) => {
            let mu = params.mu.as_ref().ok_or_else(|| {
                NetError::Dimension("gated network without gate parameters".into())
            })?;
            let g = hard_gates(mu);
            let gated = apply_gates(&budget, &g, filter, cov)?;
            let sub = solver.solve(&gated.cov, &gated.budget)?;
            Ok(Decision {
                allocation: sub.embed(budget.len(), &gated.active),
                budget: Some(budget),
                gates: Some(g),
            })
        }
    }
}
