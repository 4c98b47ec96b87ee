//! Risk-reward objectives over a window of daily portfolio returns.

use nalgebra::{DMatrix, DVector};

use super::{NetError, Objective};

/// Objective value and its gradient with respect to each daily portfolio return.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskReward {
    pub value: f64,
    pub grad: DVector<f64>,
}

impl RiskReward {
    /// Gradient with respect to the daily allocations (m×n), given the asset
    /// returns realized on each day.
    pub fn grad_wrt_alloc(&self, asset_returns: &[DVector<f64>]) -> DMatrix<f64> {
        let n = asset_returns.first().map_or(0, |r| r.len());
        DMatrix::from_fn(self.grad.len(), n, |t, i| {
            self.grad[t] * asset_returns[t][i]
        })
    }
}

pub fn objective_eval(returns: &[f64], kind: Objective) -> Result<RiskReward, NetError> {
    let m = returns.len();
    if m < 2 {
        return Err(NetError::TooFewReturns { needed: 2, got: m });
    }
    match kind {
        Objective::Sharpe => {
            let mf = m as f64;
            let mean = returns.iter().sum::<f64>() / mf;
            let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (mf - 1.0);
            let sd = var.sqrt();
            if !(sd > 0.0) {
                return Err(NetError::ZeroVolatility);
            }
            let grad = DVector::from_iterator(
                m,
                returns
                    .iter()
                    .map(|r| 1.0 / (mf * sd) - mean * (r - mean) / ((mf - 1.0) * sd * sd * sd)),
            );
            Ok(RiskReward {
                value: mean / sd,
                grad,
            })
        }
        Objective::CumReturn => {
            let value: f64 = returns.iter().map(|r| 1.0 + r).product();
            let grad = DVector::from_iterator(
                m,
                (0..m).map(|t| {
                    returns
                        .iter()
                        .enumerate()
                        .filter(|(s, _)| *s != t)
                        .map(|(_, r)| 1.0 + r)
                        .product::<f64>()
                }),
            );
            Ok(RiskReward { value, grad })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn fd(returns: &[f64], kind: Objective) -> Vec<f64> {
        let h = 1e-7;
        (0..returns.len())
            .map(|t| {
                let mut up = returns.to_vec();
                up[t] += h;
                let mut dn = returns.to_vec();
                dn[t] -= h;
                (objective_eval(&up, kind).unwrap().value
                    - objective_eval(&dn, kind).unwrap().value)
                    / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn examples() {
        assert_eq!(
            objective_eval(&[0.01, -0.01], Objective::Sharpe)
                .unwrap()
                .value,
            0.0
        );
        assert_relative_eq!(
            objective_eval(&[0.1, 0.1], Objective::CumReturn)
                .unwrap()
                .value,
            1.21,
            epsilon = 1e-15
        );
        assert_eq!(
            objective_eval(&[0.01, 0.01], Objective::Sharpe).unwrap_err(),
            NetError::ZeroVolatility
        );
        assert!(matches!(
            objective_eval(&[0.01], Objective::CumReturn),
            Err(NetError::TooFewReturns { .. })
        ));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let r = [0.012, -0.004, 0.007, 0.001, -0.009, 0.015];
        for kind in [Objective::Sharpe, Objective::CumReturn] {
            let g = objective_eval(&r, kind).unwrap().grad;
            for (a, b) in g.iter().zip(fd(&r, kind)) {
                assert!(
                    (a - b).abs() / a.abs().max(1e-12) < 1e-6,
                    "{kind:?}: {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn cum_return_gradient_handles_total_loss_day() {
        let g = objective_eval(&[-1.0, 0.5], Objective::CumReturn)
            .unwrap()
            .grad;
        assert_eq!(g[0], 1.5);
        assert_eq!(g[1], 0.0);
    }

    #[test]
    fn allocation_gradient_is_outer_product() {
        let rr = objective_eval(&[0.01, 0.02, -0.01], Objective::Sharpe).unwrap();
        let asset = vec![
            DVector::from_vec(vec![0.01, 0.03]),
            DVector::from_vec(vec![0.02, 0.0]),
            DVector::from_vec(vec![-0.01, 0.5]),
        ];
        let g = rr.grad_wrt_alloc(&asset);
        assert_eq!(g.shape(), (3, 2));
        assert_eq!(g[(2, 1)], rr.grad[2] * 0.5);
    }
}
