//! Covariance estimation, risk contributions, the long-only risk-budget solver
//! and its implicit Jacobian.
//!
//! The solver minimizes `½ yᵀΣy − Σᵢ bᵢ ln yᵢ`. Its stationarity condition
//! `Σy = b ∘ (1/y)` is the interior KKT point of the volatility-minimization
//! program with a log-budget constraint, up to a positive rescaling that the
//! normalization `z = y / ‖y‖₁` removes. Because the barrier keeps every
//! iterate strictly positive the nonnegativity multipliers vanish, and
//! differentiating the stationarity condition gives
//! `(Σ + diag(b/y²)) dy = diag(1/y) db`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use thiserror::Error;

use crate::data::ReturnsPanel;

/// Ridge added to a sample covariance whose smallest eigenvalue falls below it.
pub const RIDGE_EPS: f64 = 1e-8;

/// Default covariance lookback in days.
pub const DEFAULT_COV_WINDOW: usize = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiskError {
    #[error("day {t} needs {window} days of history for the covariance estimate")]
    InsufficientHistory { t: usize, window: usize },
    #[error("covariance window must be at least 2 days, got {0}")]
    WindowTooShort(usize),
    #[error("covariance matrix is not symmetric")]
    NotSymmetric,
    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid risk budget: {0}")]
    InvalidBudget(String),
    #[error("invalid allocation: {0}")]
    InvalidAllocation(String),
    #[error("portfolio variance is zero")]
    ZeroVariance,
    #[error(
        "risk-budget solver did not converge after {iterations} iterations (residual {residual:e})"
    )]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("line search failed at iteration {iteration} (residual {residual:e})")]
    LineSearch { iteration: usize, residual: f64 },
    #[error("solution is not interior: all entries of y must be positive")]
    NotInterior,
    #[error("linear system is numerically singular")]
    Singular,
}

/// Daily return covariance Σ; symmetric and positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix(DMatrix<f64>);

impl CovMatrix {
    pub fn new(sigma: DMatrix<f64>) -> Result<Self, RiskError> {
        if !sigma.is_square() || sigma.nrows() == 0 {
            return Err(RiskError::Dimension(format!(
                "covariance must be square and non-empty, got {}x{}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        let n = sigma.nrows();
        for i in 0..n {
            for j in 0..i {
                if (sigma[(i, j)] - sigma[(j, i)]).abs() > 1e-12 {
                    return Err(RiskError::NotSymmetric);
                }
            }
        }
        if sigma.iter().any(|v| !v.is_finite()) || sigma.clone().cholesky().is_none() {
            return Err(RiskError::NotPositiveDefinite);
        }
        Ok(Self(sigma))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    /// Diagonal covariance from per-asset volatilities.
    pub fn from_vols(vols: &[f64]) -> Result<Self, RiskError> {
        Self::new(DMatrix::from_diagonal(&DVector::from_iterator(
            vols.len(),
            vols.iter().map(|v| v * v),
        )))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn vols(&self) -> DVector<f64> {
        self.0.diagonal().map(f64::sqrt)
    }

    /// Principal sub-block on `assets` (in the given order).
    pub fn sub_block(&self, assets: &[usize]) -> Self {
        let k = assets.len();
        Self(DMatrix::from_fn(k, k, |i, j| {
            self.0[(assets[i], assets[j])]
        }))
    }

    pub fn scaled(&self, c: f64) -> Result<Self, RiskError> {
        Self::new(&self.0 * c)
    }
}

/// Target risk contributions: strictly positive, summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskBudget(DVector<f64>);

impl RiskBudget {
    pub fn new(b: DVector<f64>) -> Result<Self, RiskError> {
        if b.is_empty() {
            return Err(RiskError::InvalidBudget("empty budget".into()));
        }
        if b.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(RiskError::InvalidBudget(
                "entries must be finite and strictly positive".into(),
            ));
        }
        let sum = b.sum();
        if (sum - 1.0).abs() > 1e-10 {
            return Err(RiskError::InvalidBudget(format!("entries sum to {sum}")));
        }
        Ok(Self(b))
    }

    /// Normalizes a positive vector onto the simplex.
    pub fn normalized(v: DVector<f64>) -> Result<Self, RiskError> {
        let sum = v.sum();
        if !(sum.is_finite() && sum > 0.0) {
            return Err(RiskError::InvalidBudget(format!(
                "cannot normalize, sum {sum}"
            )));
        }
        Self::new(v / sum)
    }

    pub fn uniform(n: usize) -> Self {
        Self(DVector::from_element(n, 1.0 / n as f64))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }

    /// Budget restricted to `assets`, renormalized.
    pub fn restrict(&self, assets: &[usize]) -> Result<Self, RiskError> {
        Self::normalized(DVector::from_iterator(
            assets.len(),
            assets.iter().map(|&i| self.0[i]),
        ))
    }
}

/// Long-only portfolio weights. `raw` is the unnormalized solver output when
/// the allocation came from the risk-budget layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub weights: DVector<f64>,
    pub raw: Option<DVector<f64>>,
}

impl Allocation {
    pub fn new(weights: DVector<f64>) -> Result<Self, RiskError> {
        if weights.is_empty() {
            return Err(RiskError::InvalidAllocation("empty".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(RiskError::InvalidAllocation(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let sum = weights.sum();
        if (sum - 1.0).abs() > 1e-10 {
            return Err(RiskError::InvalidAllocation(format!(
                "weights sum to {sum}"
            )));
        }
        Ok(Self { weights, raw: None })
    }

    pub fn equal(n: usize) -> Self {
        Self {
            weights: DVector::from_element(n, 1.0 / n as f64),
            raw: None,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Spreads a sub-universe allocation over `n` assets; others get exactly 0.
    pub fn embed(&self, n: usize, assets: &[usize]) -> Self {
        let mut weights = DVector::zeros(n);
        for (k, &i) in assets.iter().enumerate() {
            weights[i] = self.weights[k];
        }
        let raw = self.raw.as_ref().map(|r| {
            let mut full = DVector::zeros(n);
            for (k, &i) in assets.iter().enumerate() {
                full[i] = r[k];
            }
            full
        });
        Self { weights, raw }
    }

    pub fn portfolio_return(&self, asset_returns: &DVector<f64>) -> f64 {
        self.weights.dot(asset_returns)
    }
}

/// Unbiased sample covariance of rows `[t - window, t - 1]`, with `RIDGE_EPS · I`
/// added when its smallest eigenvalue is below `RIDGE_EPS`.
pub fn sample_covariance(
    panel: &ReturnsPanel,
    t: usize,
    window: usize,
) -> Result<CovMatrix, RiskError> {
    if window < 2 {
        return Err(RiskError::WindowTooShort(window));
    }
    if t < window || t > panel.len() {
        return Err(RiskError::InsufficientHistory { t, window });
    }
    let n = panel.n_assets();
    let rows = panel.returns().rows(t - window, window);
    let means = DVector::from_iterator(n, (0..n).map(|j| rows.column(j).mean()));
    let mut s = DMatrix::zeros(n, n);
    let denom = (window - 1) as f64;
    for i in 0..n {
        for j in 0..=i {
            let mut acc = 0.0;
            for k in 0..window {
                acc += (rows[(k, i)] - means[i]) * (rows[(k, j)] - means[j]);
            }
            s[(i, j)] = acc / denom;
            s[(j, i)] = s[(i, j)];
        }
    }
    let min_eig = SymmetricEigen::new(s.clone()).eigenvalues.min();
    if min_eig < RIDGE_EPS {
        for i in 0..n {
            s[(i, i)] += RIDGE_EPS;
        }
    }
    CovMatrix::new(s)
}

/// Normalized risk contributions `zᵢ(Σz)ᵢ / zᵀΣz`; they sum to one.
pub fn risk_contributions(
    weights: &DVector<f64>,
    cov: &CovMatrix,
) -> Result<DVector<f64>, RiskError> {
    if weights.len() != cov.dim() {
        return Err(RiskError::Dimension(format!(
            "{} weights for a {}-asset covariance",
            weights.len(),
            cov.dim()
        )));
    }
    let marginal = cov.matrix() * weights;
    let variance = weights.dot(&marginal);
    if !(variance > 0.0) {
        return Err(RiskError::ZeroVariance);
    }
    Ok(weights.component_mul(&marginal) / variance)
}

/// Damped Newton solver for the log-barrier risk-budget problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskBudgetSolver {
    pub max_iterations: usize,
    /// Bound on `‖Σ̃y − b∘(1/y)‖∞` where Σ̃ is Σ divided by its mean variance.
    pub tolerance: f64,
}

impl Default for RiskBudgetSolver {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tolerance: 1e-10,
        }
    }
}

/// Converged solver state, in the caller's (unscaled) units.
#[derive(Debug, Clone)]
pub struct SolverReport {
    pub iterations: usize,
    pub residual: f64,
}

impl RiskBudgetSolver {
    pub fn solve(&self, cov: &CovMatrix, budget: &RiskBudget) -> Result<Allocation, RiskError> {
        self.solve_with_report(cov, budget).map(|(a, _)| a)
    }

    pub fn solve_with_report(
        &self,
        cov: &CovMatrix,
        budget: &RiskBudget,
    ) -> Result<(Allocation, SolverReport), RiskError> {
        let n = cov.dim();
        if budget.len() != n {
            return Err(RiskError::Dimension(format!(
                "{}-asset budget for a {n}-asset covariance",
                budget.len()
            )));
        }
        let b = budget.as_vector();
        // Work on Σ / mean(diag Σ) so the residual tolerance is unit-free.
        let scale = cov.matrix().trace() / n as f64;
        let a = cov.matrix() / scale;

        let mut y = DVector::from_iterator(n, (0..n).map(|i| 1.0 / (n as f64 * a[(i, i)].sqrt())));
        let mut f = barrier_objective(&a, b, &y);
        let mut residual = f64::INFINITY;
        let mut iterations = 0;
        let mut converged = false;

        while iterations <= self.max_iterations {
            let grad = &a * &y - b.component_div(&y);
            residual = grad.amax();
            if residual <= self.tolerance {
                converged = true;
                break;
            }
            if iterations == self.max_iterations {
                break;
            }
            let mut hess = a.clone();
            for i in 0..n {
                hess[(i, i)] += b[i] / (y[i] * y[i]);
            }
            let chol = Cholesky::new(hess).ok_or(RiskError::Singular)?;
            let dir = -chol.solve(&grad);

            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..64 {
                let trial = &y + &dir * step;
                if trial.iter().all(|v| *v > 0.0) {
                    let ft = barrier_objective(&a, b, &trial);
                    // Near the optimum the decrease in f drops below its rounding
                    // error, so a smaller stationarity residual also accepts.
                    let decreases = ft <= f + 1e-15 * f.abs().max(1.0)
                        || (&a * &trial - b.component_div(&trial)).amax() < residual;
                    if decreases {
                        y = trial;
                        f = ft;
                        accepted = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            if !accepted {
                return Err(RiskError::LineSearch {
                    iteration: iterations,
                    residual,
                });
            }
            iterations += 1;
        }
        if !converged {
            return Err(RiskError::NonConvergence {
                iterations,
                residual,
            });
        }
        let weights = &y / y.sum();
        let raw = y / scale.sqrt();
        Ok((
            Allocation {
                weights,
                raw: Some(raw),
            },
            SolverReport {
                iterations,
                residual,
            },
        ))
    }
}

fn barrier_objective(a: &DMatrix<f64>, b: &DVector<f64>, y: &DVector<f64>) -> f64 {
    0.5 * y.dot(&(a * y))
        - b.iter()
            .zip(y.iter())
            .map(|(bi, yi)| bi * yi.ln())
            .sum::<f64>()
}

/// Allocation whose risk contributions match `budget`, with default solver settings.
pub fn solve_risk_budget(cov: &CovMatrix, budget: &RiskBudget) -> Result<Allocation, RiskError> {
    RiskBudgetSolver::default().solve(cov, budget)
}

/// Jacobians of the risk-budget layer at a converged solution.
#[derive(Debug, Clone, PartialEq)]
pub struct RBJacobians {
    /// ∂y*/∂b.
    pub dy_db: DMatrix<f64>,
    /// Jacobian of y ↦ y/‖y‖₁.
    pub dz_dy: DMatrix<f64>,
}

impl RBJacobians {
    /// ∂z*/∂b.
    pub fn dz_db(&self) -> DMatrix<f64> {
        &self.dz_dy * &self.dy_db
    }
}

fn check_interior(cov: &CovMatrix, b: &RiskBudget, y: &DVector<f64>) -> Result<(), RiskError> {
    if b.len() != cov.dim() || y.len() != cov.dim() {
        return Err(RiskError::Dimension(
            "budget, solution and covariance differ".into(),
        ));
    }
    if y.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(RiskError::NotInterior);
    }
    Ok(())
}

fn stationarity_hessian(
    cov: &CovMatrix,
    b: &RiskBudget,
    y: &DVector<f64>,
) -> Result<Cholesky<f64, Dyn>, RiskError> {
    let mut h = cov.matrix().clone();
    for i in 0..y.len() {
        h[(i, i)] += b.as_vector()[i] / (y[i] * y[i]);
    }
    Cholesky::new(h).ok_or(RiskError::Singular)
}

/// Exact Jacobian of the normalization y ↦ y/‖y‖₁ for positive y.
pub fn normalization_jacobian(y: &DVector<f64>) -> DMatrix<f64> {
    let n = y.len();
    let s = y.sum();
    DMatrix::from_fn(n, n, |i, j| {
        let delta = if i == j { 1.0 / s } else { 0.0 };
        delta - y[i] / (s * s)
    })
}

/// Implicit Jacobians at the stationary point `raw_y` of the barrier problem.
pub fn rb_jacobian(
    cov: &CovMatrix,
    b: &RiskBudget,
    raw_y: &DVector<f64>,
) -> Result<RBJacobians, RiskError> {
    check_interior(cov, b, raw_y)?;
    let chol = stationarity_hessian(cov, b, raw_y)?;
    let rhs = DMatrix::from_diagonal(&raw_y.map(|v| 1.0 / v));
    let dy_db = chol.solve(&rhs);
    if dy_db.iter().any(|v| !v.is_finite()) {
        return Err(RiskError::Singular);
    }
    Ok(RBJacobians {
        dy_db,
        dz_dy: normalization_jacobian(raw_y),
    })
}

/// Pulls a gradient with respect to the normalized weights back to the budget:
/// returns `(∂z/∂b)ᵀ grad_z` without forming either Jacobian.
pub fn budget_vjp(
    cov: &CovMatrix,
    b: &RiskBudget,
    raw_y: &DVector<f64>,
    grad_z: &DVector<f64>,
) -> Result<DVector<f64>, RiskError> {
    check_interior(cov, b, raw_y)?;
    let s = raw_y.sum();
    let zdotg = raw_y.dot(grad_z) / s;
    let grad_y = grad_z.map(|g| (g - zdotg) / s);
    let chol = stationarity_hessian(cov, b, raw_y)?;
    let w = chol.solve(&grad_y);
    let out = w.component_div(raw_y);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(RiskError::Singular);
    }
    Ok(out)
}
