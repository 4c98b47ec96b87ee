//! Nominal comparison strategies: risk parity, equal-weight fix-mix, and risk
//! parity on a return-screened sub-universe.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::ReturnsPanel;
use crate::risk::{solve_risk_budget, Allocation, CovMatrix, RiskBudget, RiskError};

/// Screening window used by the filtered benchmarks unless overridden.
pub const DEFAULT_SCREEN_LOOKBACK: usize = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BenchmarkError {
    #[error("invalid benchmark spec: {0}")]
    InvalidSpec(String),
    #[error("day {t} has fewer than {lookback} days of history for the return screen")]
    InsufficientHistory { t: usize, lookback: usize },
    #[error(transparent)]
    Risk(#[from] RiskError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkKind {
    NominalRp,
    FixMix,
    RpPositive,
    RpTopk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub kind: BenchmarkKind,
    /// Number of assets kept by `RpTopk`.
    pub k: usize,
    /// Days in the return screen.
    pub lookback: usize,
}

impl BenchmarkSpec {
    pub fn new(kind: BenchmarkKind) -> Self {
        Self {
            kind,
            k: 4,
            lookback: DEFAULT_SCREEN_LOOKBACK,
        }
    }

    pub fn validate(&self, n: usize) -> Result<(), BenchmarkError> {
        if self.lookback == 0 {
            return Err(BenchmarkError::InvalidSpec(
                "lookback must be at least 1".into(),
            ));
        }
        if self.kind == BenchmarkKind::RpTopk && !(1..=n).contains(&self.k) {
            return Err(BenchmarkError::InvalidSpec(format!(
                "k = {} outside 1..={n}",
                self.k
            )));
        }
        Ok(())
    }
}

/// Equal-budget risk-budgeting portfolio.
pub fn nominal_rp(cov: &CovMatrix) -> Result<Allocation, RiskError> {
    solve_risk_budget(cov, &RiskBudget::uniform(cov.dim()))
}

pub fn fix_mix(n: usize) -> Result<Allocation, RiskError> {
    if n == 0 {
        return Err(RiskError::InvalidAllocation(
            "fix-mix needs at least one asset".into(),
        ));
    }
    Ok(Allocation::equal(n))
}

/// Compounded return of each asset over days `[t - lookback, t - 1]`.
pub fn lookback_returns(
    panel: &ReturnsPanel,
    t: usize,
    lookback: usize,
) -> Result<Vec<f64>, BenchmarkError> {
    if t < lookback || t > panel.len() {
        return Err(BenchmarkError::InsufficientHistory { t, lookback });
    }
    Ok((0..panel.n_assets())
        .map(|j| {
            (t - lookback..t)
                .map(|s| 1.0 + panel.get(s, j))
                .product::<f64>()
                - 1.0
        })
        .collect())
}

/// Assets kept by a screen, ascending. `fallback` is set when `RpPositive`
/// found no survivor and the full universe was used instead.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Screen {
    pub survivors: Vec<usize>,
    pub fallback: bool,
}

pub fn screen(scores: &[f64], kind: BenchmarkKind, k: usize) -> Screen {
    let n = scores.len();
    match kind {
        BenchmarkKind::NominalRp | BenchmarkKind::FixMix => Screen {
            survivors: (0..n).collect(),
            fallback: false,
        },
        BenchmarkKind::RpPositive => {
            let survivors: Vec<usize> = (0..n).filter(|&i| scores[i] > 0.0).collect();
            if survivors.is_empty() {
                Screen {
                    survivors: (0..n).collect(),
                    fallback: true,
                }
            } else {
                Screen {
                    survivors,
                    fallback: false,
                }
            }
        }
        BenchmarkKind::RpTopk => {
            let mut order: Vec<usize> = (0..n).collect();
            // Stable sort keeps the lower index first on ties.
            order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
            let mut survivors = order[..k.min(n)].to_vec();
            survivors.sort_unstable();
            Screen {
                survivors,
                fallback: false,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilteredAllocation {
    pub allocation: Allocation,
    pub screen: Screen,
}

/// Nominal risk parity on the assets that pass the screen; the rest get weight 0.
pub fn rp_filtered(
    panel: &ReturnsPanel,
    t: usize,
    cov: &CovMatrix,
    spec: &BenchmarkSpec,
) -> Result<FilteredAllocation, BenchmarkError> {
    let n = panel.n_assets();
    spec.validate(n)?;
    if cov.dim() != n {
        return Err(RiskError::Dimension(format!(
            "{}-asset covariance for a {n}-asset panel",
            cov.dim()
        ))
        .into());
    }
    let scores = lookback_returns(panel, t, spec.lookback)?;
    let screen = screen(&scores, spec.kind, spec.k);
    let allocation = if screen.survivors.len() == n {
        nominal_rp(cov)?
    } else {
        nominal_rp(&cov.sub_block(&screen.survivors))?.embed(n, &screen.survivors)
    };
    Ok(FilteredAllocation { allocation, screen })
}

/// Day-`t` allocation of any benchmark.
pub fn benchmark_allocation(
    panel: &ReturnsPanel,
    t: usize,
    cov: &CovMatrix,
    spec: &BenchmarkSpec,
) -> Result<FilteredAllocation, BenchmarkError> {
    let n = panel.n_assets();
    let all = || Screen {
        survivors: (0..n).collect(),
        fallback: false,
    };
    match spec.kind {
        BenchmarkKind::FixMix => Ok(FilteredAllocation {
            allocation: fix_mix(n)?,
            screen: all(),
        }),
        BenchmarkKind::NominalRp => Ok(FilteredAllocation {
            allocation: nominal_rp(cov)?,
            screen: all(),
        }),
        BenchmarkKind::RpPositive | BenchmarkKind::RpTopk => rp_filtered(panel, t, cov, spec),
    }
}
