//! Rolling walk-forward backtest. Each block of `retrain_every` decision days
//! is preceded by a training pass over the `lookback` days just before it;
//! parameters then stay fixed while the strategy allocates day by day.

use log::{debug, warn};
use nalgebra::DVector;
use thiserror::Error;

use crate::benchmarks::{benchmark_allocation, BenchmarkError, BenchmarkSpec};
use crate::data::{build_features, DataError, ReturnsPanel, FEATURE_HISTORY};
use crate::metrics::MetricsError;
use crate::net::{allocate, train, NetError, NetworkParams, TrainConfig, TrainingDay};
use crate::risk::{sample_covariance, Allocation, CovMatrix, RiskBudgetSolver, DEFAULT_COV_WINDOW};

pub use crate::metrics::WealthSeries;

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Benchmark(#[from] BenchmarkError),
}

/// Decision days run from `start` to `end` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BacktestSchedule {
    pub lookback: usize,
    pub retrain_every: usize,
    pub start: usize,
    pub end: usize,
}

impl BacktestSchedule {
    /// Earliest valid start through the last day of a `len`-day panel.
    pub fn full(lookback: usize, retrain_every: usize, len: usize) -> Self {
        Self {
            lookback,
            retrain_every,
            start: lookback.max(FEATURE_HISTORY),
            end: len.saturating_sub(1),
        }
    }

    pub fn validate(&self, panel_len: usize) -> Result<(), BacktestError> {
        let bad = |m: String| Err(BacktestError::Schedule(m));
        if self.lookback < 2 {
            return bad(format!("lookback {} must be at least 2", self.lookback));
        }
        if self.retrain_every == 0 {
            return bad("retrain_every must be at least 1".into());
        }
        let min_start = self.lookback.max(FEATURE_HISTORY);
        if self.start < min_start {
            return bad(format!("start {} precedes day {min_start}", self.start));
        }
        if self.end < self.start {
            return bad(format!("end {} precedes start {}", self.end, self.start));
        }
        if self.end >= panel_len {
            return bad(format!(
                "end {} is past the last day {} of the panel",
                self.end,
                panel_len as isize - 1
            ));
        }
        Ok(())
    }

    pub fn n_days(&self) -> usize {
        self.end - self.start + 1
    }

    /// First decision day of every block.
    pub fn block_starts(&self) -> impl Iterator<Item = usize> + '_ {
        (self.start..=self.end).step_by(self.retrain_every)
    }

    /// Training days for the block starting at `block_start`, clipped to days
    /// with a full feature history.
    pub fn training_window(&self, block_start: usize) -> std::ops::Range<usize> {
        block_start
            .saturating_sub(self.lookback)
            .max(FEATURE_HISTORY)..block_start
    }
}

/// An allocation policy.
#[derive(Debug, Clone, PartialEq)]
pub enum Strategy {
    Benchmark(BenchmarkSpec),
    EndToEnd(TrainConfig),
}

/// Features and covariance estimates for every day that can be traded.
#[derive(Debug, Clone)]
pub struct MarketCache {
    first: usize,
    features: Vec<DVector<f64>>,
    covs: Vec<CovMatrix>,
}

impl MarketCache {
    /// Days `[FEATURE_HISTORY, end]`; features are multiplied by `feature_scale`.
    pub fn build(
        panel: &ReturnsPanel,
        end: usize,
        feature_scale: f64,
    ) -> Result<Self, BacktestError> {
        let first = FEATURE_HISTORY.max(DEFAULT_COV_WINDOW);
        let mut features = Vec::new();
        let mut covs = Vec::new();
        for t in first..=end {
            let mut f = build_features(panel, t)?.values;
            if feature_scale != 1.0 {
                f *= feature_scale;
            }
            features.push(f);
            covs.push(
                sample_covariance(panel, t, DEFAULT_COV_WINDOW)
                    .map_err(|e| BacktestError::Net(e.into()))?,
            );
        }
        Ok(Self {
            first,
            features,
            covs,
        })
    }

    pub fn features(&self, t: usize) -> &DVector<f64> {
        &self.features[t - self.first]
    }

    pub fn cov(&self, t: usize) -> &CovMatrix {
        &self.covs[t - self.first]
    }

    fn covers(&self, t: usize) -> bool {
        t >= self.first && t - self.first < self.covs.len()
    }
}

/// A day on which the strategy could not produce a fresh allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub day: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingEvent {
    pub block_start: usize,
    pub window: std::ops::Range<usize>,
    /// Objective value before each update step.
    pub objective_trace: Vec<f64>,
    /// Hard gates (1 open, 0 closed) in force for the block; gated strategies only.
    pub gates: Option<DVector<f64>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct BacktestRun {
    pub wealth: WealthSeries,
    pub training_events: Vec<TrainingEvent>,
    pub failures: Vec<Failure>,
    /// Days where the positive-return screen kept nothing and the full universe was used.
    pub screen_fallbacks: Vec<usize>,
    pub final_params: Option<NetworkParams>,
}

pub fn run_backtest(
    strategy: &Strategy,
    panel: &ReturnsPanel,
    schedule: &BacktestSchedule,
) -> Result<BacktestRun, BacktestError> {
    let scale = match strategy {
        Strategy::EndToEnd(cfg) => cfg.feature_scale,
        Strategy::Benchmark(_) => 1.0,
    };
    schedule.validate(panel.len())?;
    let cache = MarketCache::build(panel, schedule.end, scale)?;
    run_backtest_cached(strategy, panel, schedule, &cache)
}

/// As [`run_backtest`], reusing precomputed features and covariances.
pub fn run_backtest_cached(
    strategy: &Strategy,
    panel: &ReturnsPanel,
    schedule: &BacktestSchedule,
    cache: &MarketCache,
) -> Result<BacktestRun, BacktestError> {
    schedule.validate(panel.len())?;
    if !cache.covers(schedule.end) || !cache.covers(schedule.training_window(schedule.start).start)
    {
        return Err(BacktestError::Schedule(
            "market cache does not cover the schedule".into(),
        ));
    }
    let n = panel.n_assets();
    let solver = RiskBudgetSolver::default();
    let mut state = match strategy {
        Strategy::EndToEnd(cfg) => {
            cfg.validate()?;
            Some(E2eState {
                cfg: cfg.clone(),
                params: NetworkParams::init(
                    n,
                    cfg.hidden,
                    cfg.architecture.is_gated(),
                    cfg.gate_init,
                    cfg.seed,
                ),
            })
        }
        Strategy::Benchmark(spec) => {
            spec.validate(n)?;
            None
        }
    };

    let mut dates = Vec::with_capacity(schedule.n_days());
    let mut returns = Vec::with_capacity(schedule.n_days());
    let mut allocations: Vec<DVector<f64>> = Vec::with_capacity(schedule.n_days());
    let mut events = Vec::new();
    let mut failures = Vec::new();
    let mut fallbacks = Vec::new();
    let mut previous: Option<Allocation> = None;

    for (block, block_start) in schedule.block_starts().enumerate() {
        if let Some(st) = state.as_mut() {
            events.push(st.retrain(cache, panel, schedule, block, block_start, &solver));
        }
        let block_end = (block_start + schedule.retrain_every - 1).min(schedule.end);
        for t in block_start..=block_end {
            let fresh = match (&state, strategy) {
                (Some(st), _) => allocate(
                    &st.params,
                    st.cfg.architecture,
                    &crate::data::FeatureVector {
                        values: cache.features(t).clone(),
                        as_of: t,
                    },
                    cache.cov(t),
                    &solver,
                )
                .map(|d| d.allocation)
                .map_err(|e| e.to_string()),
                (None, Strategy::Benchmark(spec)) => {
                    benchmark_allocation(panel, t, cache.cov(t), spec)
                        .map(|f| {
                            if f.screen.fallback {
                                fallbacks.push(t);
                            }
                            f.allocation
                        })
                        .map_err(|e| e.to_string())
                }
                (None, Strategy::EndToEnd(_)) => unreachable!("end-to-end state is always set"),
            };
            let alloc = match fresh {
                Ok(a) => a,
                Err(message) => {
                    warn!("day {t}: {message}; carrying the previous allocation forward");
                    failures.push(Failure { day: t, message });
                    previous.clone().unwrap_or_else(|| Allocation::equal(n))
                }
            };
            dates.push(panel.dates()[t]);
            returns.push(alloc.portfolio_return(&panel.day(t)));
            allocations.push(alloc.weights.clone());
            previous = Some(alloc);
        }
    }

    Ok(BacktestRun {
        wealth: WealthSeries::from_returns(dates, returns, allocations)?,
        training_events: events,
        failures,
        screen_fallbacks: fallbacks,
        final_params: state.map(|s| s.params),
    })
}

struct E2eState {
    cfg: TrainConfig,
    params: NetworkParams,
}

impl E2eState {
    fn retrain(
        &mut self,
        cache: &MarketCache,
        panel: &ReturnsPanel,
        schedule: &BacktestSchedule,
        block: usize,
        block_start: usize,
        solver: &RiskBudgetSolver,
    ) -> TrainingEvent {
        let window = schedule.training_window(block_start);
        let days: Vec<TrainingDay> = window
            .clone()
            .map(|t| TrainingDay {
                features: cache.features(t).clone(),
                cov: cache.cov(t).clone(),
                returns: panel.day(t),
            })
            .collect();
        let init = if self.cfg.warm_start || block == 0 {
            self.params.clone()
        } else {
            NetworkParams::init(
                self.params.n_assets(),
                self.cfg.hidden,
                self.cfg.architecture.is_gated(),
                self.cfg.gate_init,
                self.cfg.seed,
            )
        };
        let cfg = TrainConfig {
            seed: self.cfg.seed.wrapping_add(block as u64 + 1),
            ..self.cfg.clone()
        };
        let (trace, error) = match train(&days, &cfg, &init, solver) {
            Ok(out) => {
                self.params = out.params;
                (out.objective_trace, None)
            }
            Err(e) => {
                warn!("training for block at day {block_start} failed: {e}; keeping previous parameters");
                self.params = init;
                (Vec::new(), Some(e.to_string()))
            }
        };
        debug!("block at day {block_start}: trained on {window:?}");
        TrainingEvent {
            block_start,
            window,
            objective_trace: trace,
            gates: self.params.mu.as_ref().map(crate::net::hard_gates),
            error,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::BenchmarkKind;
    use crate::data::{etf7_sim_spec, simulate_returns};
    use crate::net::Architecture;
    use nalgebra::DMatrix;

    fn small_cfg(arch: Architecture) -> TrainConfig {
        TrainConfig {
            hidden: 6,
            steps: 3,
            architecture: arch,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn schedule_arithmetic() {
        let s = BacktestSchedule::full(150, 5, 325);
        assert_eq!(s.start, 150);
        assert_eq!(s.block_starts().count(), 35);
        assert_eq!(s.training_window(150), 30..150);
        assert_eq!(s.training_window(200), 50..200);
        assert!(BacktestSchedule {
            start: 29,
            ..BacktestSchedule::full(10, 5, 100)
        }
        .validate(100)
        .is_err());
        assert!(BacktestSchedule { end: 100, ..s }.validate(100).is_err());
    }

    #[test]
    fn thirty_five_training_events() {
        let p = simulate_returns(&etf7_sim_spec(325, 3)).unwrap();
        let s = BacktestSchedule::full(150, 5, 325);
        let run = run_backtest(
            &Strategy::EndToEnd(small_cfg(Architecture::ModelBased)),
            &p,
            &s,
        )
        .unwrap();
        assert_eq!(run.training_events.len(), 35);
        assert_eq!(run.training_events[0].block_start, 150);
        assert_eq!(run.wealth.len(), 175);
        assert_eq!(run.wealth.dates[0], p.dates()[150]);
    }

    #[test]
    fn fix_mix_wealth_is_schedule_free() {
        let p = simulate_returns(&etf7_sim_spec(120, 4)).unwrap();
        let strat = Strategy::Benchmark(BenchmarkSpec::new(BenchmarkKind::FixMix));
        let a = run_backtest(
            &strat,
            &p,
            &BacktestSchedule {
                start: 40,
                end: 119,
                lookback: 30,
                retrain_every: 5,
            },
        )
        .unwrap();
        let b = run_backtest(
            &strat,
            &p,
            &BacktestSchedule {
                start: 40,
                end: 119,
                lookback: 40,
                retrain_every: 17,
            },
        )
        .unwrap();
        assert_eq!(a.wealth, b.wealth);
        let mut w = 1.0;
        for t in 40..120 {
            w *= 1.0 + p.day(t).mean();
        }
        assert!((a.wealth.final_wealth() - w).abs() < 1e-12);
    }

    #[test]
    fn zero_returns_give_flat_wealth() {
        let d0 = chrono::NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        let p = ReturnsPanel::new(
            (0..60).map(|i| d0 + chrono::Days::new(i)).collect(),
            vec!["A".into(), "B".into()],
            DMatrix::zeros(60, 2),
        )
        .unwrap();
        let s = BacktestSchedule::full(30, 5, 60);
        for kind in [
            BenchmarkKind::FixMix,
            BenchmarkKind::NominalRp,
            BenchmarkKind::RpPositive,
        ] {
            let run = run_backtest(&Strategy::Benchmark(BenchmarkSpec::new(kind)), &p, &s).unwrap();
            assert!(run.wealth.wealth.iter().all(|w| *w == 1.0));
        }
    }

    #[test]
    fn wealth_recursion_holds() {
        let p = simulate_returns(&etf7_sim_spec(200, 5)).unwrap();
        let s = BacktestSchedule::full(60, 10, 200);
        let run = run_backtest(
            &Strategy::EndToEnd(small_cfg(Architecture::GatedFilter)),
            &p,
            &s,
        )
        .unwrap();
        let w = &run.wealth;
        let mut prev = 1.0;
        for t in 0..w.len() {
            assert!((w.wealth[t] - prev * (1.0 + w.daily_returns[t])).abs() < 1e-12);
            prev = w.wealth[t];
        }
        assert!(run.training_events.iter().all(|e| e.gates.is_some()));
    }

    #[test]
    fn future_returns_do_not_change_allocations() {
        let p = simulate_returns(&etf7_sim_spec(140, 6)).unwrap();
        let s = BacktestSchedule::full(40, 7, 140);
        let strategies = [
            Strategy::Benchmark(BenchmarkSpec::new(BenchmarkKind::NominalRp)),
            Strategy::Benchmark(BenchmarkSpec::new(BenchmarkKind::RpTopk)),
            Strategy::EndToEnd(small_cfg(Architecture::ModelBased)),
            Strategy::EndToEnd(small_cfg(Architecture::GatedNoFilter)),
        ];
        for strat in &strategies {
            let base = run_backtest(strat, &p, &s).unwrap();
            for cut in [40usize, 77, 139] {
                let mut q = p.clone();
                for t in cut..q.len() {
                    for j in 0..q.n_assets() {
                        q.set(t, j, 0.05 * ((t + j) as f64).sin()).unwrap();
                    }
                }
                let mutated = run_backtest(strat, &q, &s).unwrap();
                for t in s.start..=cut {
                    let k = t - s.start;
                    assert_eq!(
                        base.wealth.allocations[k], mutated.wealth.allocations[k],
                        "{strat:?} day {t} cut {cut}"
                    );
                }
            }
        }
    }
}
