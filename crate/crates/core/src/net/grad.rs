//! Exact gradient of the window objective with respect to every network
//! parameter. Model-based variants differentiate through the risk-budget solver
//! with the implicit Jacobian; gates pass gradients straight through where the
//! clamp is strictly interior.

use nalgebra::DVector;

use super::gates::{apply_gates, soft_gates, GatedBudget};
use super::objective::objective_eval;
use super::{perceptron, Activations, Architecture, NetError, NetworkParams, Objective};
use crate::risk::{budget_vjp, CovMatrix, RiskBudget, RiskBudgetSolver};

/// One day of a training window: features known before the day, the
/// covariance estimate for the day, and the asset returns realized on it.
#[derive(Debug, Clone)]
pub struct TrainingDay {
    pub features: DVector<f64>,
    pub cov: CovMatrix,
    pub returns: DVector<f64>,
}

struct LayerState {
    gated: Option<GatedBudget>,
    y: DVector<f64>,
}

struct DayState {
    acts: Activations,
    weights: DVector<f64>,
    layer: Option<LayerState>,
}

struct WindowPass {
    days: Vec<DayState>,
    port: Vec<f64>,
    gates: Option<DVector<f64>>,
}

fn training_gates(
    params: &NetworkParams,
    architecture: Architecture,
    noise: Option<&DVector<f64>>,
) -> Result<Option<DVector<f64>>, NetError> {
    if !architecture.is_gated() {
        return Ok(None);
    }
    let mu = params
        .mu
        .as_ref()
        .ok_or_else(|| NetError::Dimension("gated network without gate parameters".into()))?;
    let zero = DVector::zeros(mu.len());
    let noise = noise.unwrap_or(&zero);
    if noise.len() != mu.len() {
        return Err(NetError::Dimension("gate noise length".into()));
    }
    Ok(Some(soft_gates(mu, noise)))
}

fn forward_window(
    params: &NetworkParams,
    days: &[TrainingDay],
    architecture: Architecture,
    noise: Option<&DVector<f64>>,
    solver: &RiskBudgetSolver,
) -> Result<WindowPass, NetError> {
    params.check_shapes()?;
    let gates = training_gates(params, architecture, noise)?;
    let n = params.n_assets();
    let mut states = Vec::with_capacity(days.len());
    let mut port = Vec::with_capacity(days.len());
    for day in days {
        if day.returns.len() != n || day.cov.dim() != n {
            return Err(NetError::Dimension(format!(
                "training day has {} returns and a {}-asset covariance, network has {n} assets",
                day.returns.len(),
                day.cov.dim()
            )));
        }
        let acts = perceptron(params, &day.features)?;
        let (weights, layer) = match architecture {
            Architecture::ModelFree => (acts.probs.clone(), None),
            Architecture::ModelBased => {
                let budget = RiskBudget::new(acts.probs.clone())?;
                let alloc = solver.solve(&day.cov, &budget)?;
                let y = alloc.raw.expect("solver returns raw output");
                (alloc.weights, Some(LayerState { gated: None, y }))
            }
            Architecture::GatedFilter | Architecture::GatedNoFilter => {
                let g = gates.as_ref().expect("gated");
                let filter = architecture.gate_filter().expect("gated");
                let budget = RiskBudget::new(acts.probs.clone())?;
                let gated = apply_gates(&budget, g, filter, &day.cov)?;
                let alloc = solver.solve(&gated.cov, &gated.budget)?;
                let full = alloc.embed(n, &gated.active);
                let y = alloc.raw.expect("solver returns raw output");
                (
                    full.weights,
                    Some(LayerState {
                        gated: Some(gated),
                        y,
                    }),
                )
            }
        };
        port.push(weights.dot(&day.returns));
        states.push(DayState {
            acts,
            weights,
            layer,
        });
    }
    Ok(WindowPass {
        days: states,
        port,
        gates,
    })
}

/// Window objective without the backward pass.
pub fn objective_value(
    params: &NetworkParams,
    days: &[TrainingDay],
    architecture: Architecture,
    objective: Objective,
    gate_noise: Option<&DVector<f64>>,
    solver: &RiskBudgetSolver,
) -> Result<f64, NetError> {
    let pass = forward_window(params, days, architecture, gate_noise, solver)?;
    Ok(objective_eval(&pass.port, objective)?.value)
}

/// Objective value over the window and its gradient, shaped like `params`.
/// `gate_noise` is the ε draw for gated variants (zero when `None`).
pub fn full_gradient(
    params: &NetworkParams,
    days: &[TrainingDay],
    architecture: Architecture,
    objective: Objective,
    gate_noise: Option<&DVector<f64>>,
    solver: &RiskBudgetSolver,
) -> Result<(f64, NetworkParams), NetError> {
    let pass = forward_window(params, days, architecture, gate_noise, solver)?;
    let rr = objective_eval(&pass.port, objective)?;
    let n = params.n_assets();
    let mut grad = params.zeros_like();
    let mut grad_gates = DVector::zeros(n);

    for ((day, state), g_ret) in days.iter().zip(&pass.days).zip(rr.grad.iter()) {
        let grad_w = &day.returns * *g_ret;
        let probs = &state.acts.probs;
        let grad_probs = match &state.layer {
            None => grad_w,
            Some(layer) => match &layer.gated {
                None => {
                    let budget = RiskBudget::new(probs.clone())?;
                    budget_vjp(&day.cov, &budget, &layer.y, &grad_w)?
                }
                Some(gated) => {
                    let sub_grad = DVector::from_iterator(
                        gated.active.len(),
                        gated.active.iter().map(|&i| grad_w[i]),
                    );
                    let grad_gated = budget_vjp(&gated.cov, &gated.budget, &layer.y, &sub_grad)?;
                    let g = pass.gates.as_ref().expect("gated");
                    let (gb, gg) = gated.backward(probs, g, &grad_gated);
                    grad_gates += gg;
                    gb
                }
            },
        };
        debug_assert_eq!(state.weights.len(), n);

        // softmax
        let grad_logits = probs.component_mul(&grad_probs.add_scalar(-probs.dot(&grad_probs)));
        grad.w2.ger(1.0, &grad_logits, &state.acts.act, 1.0);
        grad.b2 += &grad_logits;
        let grad_act = params.w2.tr_mul(&grad_logits);
        let grad_pre = grad_act.zip_map(&state.acts.pre, |g, p| g * super::leaky_relu_slope(p));
        grad.w1.ger(1.0, &grad_pre, &day.features, 1.0);
        grad.b1 += &grad_pre;
    }

    if let (Some(mu), Some(grad_mu)) = (params.mu.as_ref(), grad.mu.as_mut()) {
        if architecture.is_gated() {
            let zero = DVector::zeros(n);
            let noise = gate_noise.unwrap_or(&zero);
            for i in 0..n {
                let open = mu[i] + noise[i];
                if open > 0.0 && open < 1.0 {
                    grad_mu[i] = grad_gates[i];
                }
            }
        }
    }
    Ok((rr.value, grad))
}
