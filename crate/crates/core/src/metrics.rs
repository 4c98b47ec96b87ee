//! Wealth paths, drawdowns, annualized performance statistics and the Z tests
//! used to compare strategies across seeds.

use chrono::NaiveDate;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Trading days per year used for annualization.
pub const TRADING_DAYS: f64 = 252.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("need at least {needed} observations, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("volatility is zero; Sharpe ratio undefined")]
    ZeroVolatility,
    #[error("maximum drawdown is zero; Calmar ratio undefined")]
    ZeroDrawdown,
    #[error("average drawdown is zero; return over average drawdown undefined")]
    ZeroAverageDrawdown,
    #[error("standard deviation must be positive")]
    ZeroVariance,
    #[error("wealth must stay strictly positive (day {0})")]
    NonPositiveWealth(usize),
    #[error("series lengths differ: {0}")]
    Length(String),
}

/// Daily portfolio returns and the wealth they compound to, starting from 1.0.
#[derive(Debug, Clone, PartialEq)]
pub struct WealthSeries {
    pub dates: Vec<NaiveDate>,
    pub daily_returns: Vec<f64>,
    /// Wealth after each day's return; the implicit base before day 0 is 1.0.
    pub wealth: Vec<f64>,
    pub allocations: Vec<DVector<f64>>,
}

impl WealthSeries {
    pub fn from_returns(
        dates: Vec<NaiveDate>,
        daily_returns: Vec<f64>,
        allocations: Vec<DVector<f64>>,
    ) -> Result<Self, MetricsError> {
        if dates.len() != daily_returns.len() || allocations.len() != daily_returns.len() {
            return Err(MetricsError::Length(format!(
                "{} dates, {} returns, {} allocations",
                dates.len(),
                daily_returns.len(),
                allocations.len()
            )));
        }
        let mut wealth = Vec::with_capacity(daily_returns.len());
        let mut w = 1.0;
        for (t, r) in daily_returns.iter().enumerate() {
            w *= 1.0 + r;
            if !(w > 0.0) {
                return Err(MetricsError::NonPositiveWealth(t));
            }
            wealth.push(w);
        }
        Ok(Self {
            dates,
            daily_returns,
            wealth,
            allocations,
        })
    }

    pub fn len(&self) -> usize {
        self.wealth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wealth.is_empty()
    }

    pub fn final_wealth(&self) -> f64 {
        self.wealth.last().copied().unwrap_or(1.0)
    }

    /// Sub-series over `[from, to)` re-based to 1.0 at its start.
    pub fn slice(&self, from: usize, to: usize) -> Result<Self, MetricsError> {
        Self::from_returns(
            self.dates[from..to].to_vec(),
            self.daily_returns[from..to].to_vec(),
            self.allocations[from..to].to_vec(),
        )
    }
}

/// `1 − wₜ / max_{s≤t} w_s` along `path`, with the running peak seeded by `path[0]`.
pub fn drawdowns(path: &[f64]) -> Vec<f64> {
    let mut peak = f64::NEG_INFINITY;
    path.iter()
        .map(|&w| {
            peak = peak.max(w);
            1.0 - w / peak
        })
        .collect()
}

/// Daily drawdowns of a wealth series; the running peak includes the 1.0 base.
pub fn drawdown_series(series: &WealthSeries) -> Vec<f64> {
    let mut peak = 1.0f64;
    series
        .wealth
        .iter()
        .map(|&w| {
            peak = peak.max(w);
            1.0 - w / peak
        })
        .collect()
}

/// Annualized statistics. Ratios that would divide by zero are `None`; the
/// accessor methods report those as errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfStats {
    pub ann_return: f64,
    pub ann_volatility: f64,
    pub sharpe: Option<f64>,
    pub mdd: f64,
    pub calmar: Option<f64>,
    pub return_over_avg_dd: Option<f64>,
}

impl PerfStats {
    pub fn sharpe(&self) -> Result<f64, MetricsError> {
        self.sharpe.ok_or(MetricsError::ZeroVolatility)
    }

    pub fn calmar(&self) -> Result<f64, MetricsError> {
        self.calmar.ok_or(MetricsError::ZeroDrawdown)
    }

    pub fn return_over_avg_dd(&self) -> Result<f64, MetricsError> {
        self.return_over_avg_dd
            .ok_or(MetricsError::ZeroAverageDrawdown)
    }
}

/// Sample standard deviation (denominator m − 1).
pub fn sample_sd(xs: &[f64]) -> f64 {
    let m = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / m;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
}

pub fn perf_stats(series: &WealthSeries, periods_per_year: f64) -> Result<PerfStats, MetricsError> {
    perf_stats_with_risk_free(series, periods_per_year, 0.0)
}

/// As [`perf_stats`], with an annual risk-free rate subtracted in the Sharpe
/// and Calmar numerators.
pub fn perf_stats_with_risk_free(
    series: &WealthSeries,
    periods_per_year: f64,
    risk_free: f64,
) -> Result<PerfStats, MetricsError> {
    let t = series.len();
    if t < 2 {
        return Err(MetricsError::TooShort { needed: 2, got: t });
    }
    let ann_return = series.final_wealth().powf(periods_per_year / t as f64) - 1.0;
    let ann_volatility = sample_sd(&series.daily_returns) * periods_per_year.sqrt();
    let dd = drawdown_series(series);
    let mdd = dd.iter().copied().fold(0.0, f64::max);
    let avg_dd = dd.iter().sum::<f64>() / t as f64;
    let excess = ann_return - risk_free;
    Ok(PerfStats {
        ann_return,
        ann_volatility,
        sharpe: (ann_volatility > 0.0).then(|| excess / ann_volatility),
        mdd,
        calmar: (mdd > 0.0).then(|| excess / mdd),
        return_over_avg_dd: (avg_dd > 0.0).then(|| ann_return / avg_dd),
    })
}

/// Statistics of a single return stream (e.g. one asset held throughout).
pub fn perf_stats_from_returns(
    returns: &[f64],
    periods_per_year: f64,
    risk_free: f64,
) -> Result<PerfStats, MetricsError> {
    let series = WealthSeries {
        dates: Vec::new(),
        daily_returns: returns.to_vec(),
        wealth: returns
            .iter()
            .scan(1.0, |w, r| {
                *w *= 1.0 + r;
                Some(*w)
            })
            .collect(),
        allocations: Vec::new(),
    };
    perf_stats_with_risk_free(&series, periods_per_year, risk_free)
}

/// Two-sample Z statistic `(m1 − m2) / √(s1²/n1 + s2²/n2)`.
pub fn ztest_two_sample(
    m1: f64,
    s1: f64,
    n1: usize,
    m2: f64,
    s2: f64,
    n2: usize,
) -> Result<f64, MetricsError> {
    if n1 < 2 || n2 < 2 {
        return Err(MetricsError::TooShort {
            needed: 2,
            got: n1.min(n2),
        });
    }
    if !(s1 > 0.0 && s2 > 0.0) {
        return Err(MetricsError::ZeroVariance);
    }
    Ok((m1 - m2) / (s1 * s1 / n1 as f64 + s2 * s2 / n2 as f64).sqrt())
}

/// One-sample Z statistic `(m − benchmark) / (s / √n)`.
pub fn ztest_one_sample(m: f64, s: f64, n: usize, benchmark: f64) -> Result<f64, MetricsError> {
    if n < 2 {
        return Err(MetricsError::TooShort { needed: 2, got: n });
    }
    if !(s > 0.0) {
        return Err(MetricsError::ZeroVariance);
    }
    Ok((m - benchmark) / (s / (n as f64).sqrt()))
}
