use riskbudget::benchmarks::{BenchmarkKind, BenchmarkSpec};
use riskbudget::data::{etf7_sim_spec, load_returns, simulate_returns, write_returns};
use riskbudget::metrics::{perf_stats, TRADING_DAYS};
use riskbudget::{run_backtest, Architecture, BacktestSchedule, Strategy, TrainConfig};

fn recompute_stats(daily: &[f64]) -> (f64, f64) {
    let t = daily.len() as f64;
    let growth: f64 = daily.iter().map(|r| 1.0 + r).product();
    let mean = daily.iter().sum::<f64>() / t;
    let var = daily.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (t - 1.0);
    (
        growth.powf(TRADING_DAYS / t) - 1.0,
        (var * TRADING_DAYS).sqrt(),
    )
}

#[test]
fn csv_to_backtest_to_statistics() {
    let simulated = simulate_returns(&etf7_sim_spec(180, 11)).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("returns.csv");
    write_returns(&simulated, std::fs::File::create(&path).unwrap()).unwrap();
    let panel = load_returns(&path).unwrap();
    assert_eq!(panel, simulated);

    let schedule = BacktestSchedule::full(60, 15, panel.len());
    let strategies = [
        Strategy::Benchmark(BenchmarkSpec::new(BenchmarkKind::NominalRp)),
        Strategy::Benchmark(BenchmarkSpec::new(BenchmarkKind::RpTopk)),
        Strategy::EndToEnd(TrainConfig {
            steps: 3,
            hidden: 8,
            lookback: 60,
            retrain_every: 15,
            architecture: Architecture::GatedFilter,
            ..TrainConfig::default()
        }),
    ];
    for strategy in &strategies {
        let run = run_backtest(strategy, &panel, &schedule).unwrap();
        let w = &run.wealth;
        assert_eq!(w.len(), schedule.n_days());
        assert_eq!(w.dates[0], panel.dates()[60]);
        for (k, a) in w.allocations.iter().enumerate() {
            assert!((a.sum() - 1.0).abs() < 1e-9);
            assert!(a.iter().all(|&x| x >= 0.0));
            let r = a.dot(&panel.day(60 + k));
            assert!((w.daily_returns[k] - r).abs() < 1e-15);
        }
        let stats = perf_stats(w, TRADING_DAYS).unwrap();
        let (ann_return, ann_vol) = recompute_stats(&w.daily_returns);
        assert!((stats.ann_return - ann_return).abs() < 1e-12);
        assert!((stats.ann_volatility - ann_vol).abs() < 1e-12);
        assert!((stats.sharpe.unwrap() - ann_return / ann_vol).abs() < 1e-10);
        assert!(stats.mdd >= 0.0 && stats.mdd < 1.0);
    }
}
