//! The three commands. Each computes its results in memory, then writes
//! every output file; a failure anywhere leaves no partial outputs behind.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use log::{info, warn};
use rayon::prelude::*;
use riskbudget::backtest::{run_backtest_cached, MarketCache};
use riskbudget::metrics::{
    perf_stats, sample_sd, ztest_one_sample, ztest_two_sample, TRADING_DAYS,
};
use riskbudget::{BacktestRun, BacktestSchedule, Objective, PerfStats, ReturnsPanel, Strategy};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{resolve_day, RunConfig, StrategyId};
use crate::report::{allocations_csv, gates_csv, to_report_json, wealth_csv, OutputDir};
use crate::CliError;

/// Seed sweeps with fewer seeds than this get their Z tests flagged.
pub const LOW_POWER_SEEDS: usize = 30;

/// One strategy's backtest and statistics.
#[derive(Debug, Clone)]
pub struct StrategyResult {
    pub id: StrategyId,
    pub run: BacktestRun,
    /// `None` when the backtest is too short for statistics.
    pub stats: Option<PerfStats>,
}

/// Runs every strategy over one panel, in parallel, preserving order.
pub fn run_strategies(
    cfg: &RunConfig,
    panel: &ReturnsPanel,
    schedule: &BacktestSchedule,
    ids: &[StrategyId],
    seed: u64,
) -> Result<Vec<StrategyResult>, CliError> {
    let cache = MarketCache::build(panel, schedule.end, cfg.train.feature_scale)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    ids.par_iter()
        .map(|&id| {
            let strategy = cfg.strategy(id, seed);
            let run = run_backtest_cached(&strategy, panel, schedule, &cache)
                .map_err(|e| CliError::Runtime(format!("{id}: {e}")))?;
            let stats = perf_stats(&run.wealth, TRADING_DAYS).ok();
            Ok(StrategyResult { id, run, stats })
        })
        .collect()
}

fn stats_json(stats: &Option<PerfStats>) -> Value {
    serde_json::to_value(stats).expect("stats serialize")
}

fn strategy_json(r: &StrategyResult, dates: &[NaiveDate]) -> Value {
    let run = &r.run;
    let training_errors: Vec<Value> = run
        .training_events
        .iter()
        .filter_map(|e| {
            e.error.as_ref().map(|m| {
                json!({"date": dates[e.block_start].to_string(), "day": e.block_start, "message": m})
            })
        })
        .collect();
    let failures: Vec<Value> = run
        .failures
        .iter()
        .map(|f| json!({"date": dates[f.day].to_string(), "day": f.day, "message": f.message}))
        .collect();
    let fallbacks: Vec<String> = run
        .screen_fallbacks
        .iter()
        .map(|&t| dates[t].to_string())
        .collect();
    let mut v = json!({
        "name": r.id.to_string(),
        "stats": stats_json(&r.stats),
        "final_wealth": run.wealth.final_wealth(),
        "days": run.wealth.len(),
        "training_events": run.training_events.len(),
        "training_errors": training_errors,
        "solver_failures": failures,
        "screen_fallbacks": fallbacks,
    });
    if let Some(rate) = gate_open_rate(run) {
        v["gate_open_rate"] = json!(rate);
    }
    v
}

/// Fraction of retrainings after which each asset's gate was open.
pub fn gate_open_rate(run: &BacktestRun) -> Option<Vec<f64>> {
    let gates: Vec<_> = run
        .training_events
        .iter()
        .filter_map(|e| e.gates.as_ref())
        .collect();
    let first = gates.first()?;
    let m = gates.len() as f64;
    Some(
        (0..first.len())
            .map(|i| gates.iter().map(|g| g[i]).sum::<f64>() / m)
            .collect(),
    )
}

fn data_json(cfg: &RunConfig, panel: &ReturnsPanel, seed: u64) -> Value {
    let source = match &cfg.data.path {
        Some(p) => json!({"path": p.display().to_string()}),
        None => json!({
            "simulate": cfg.data.simulate,
            "horizon": cfg.data.horizon,
            "seed": cfg.data.seed.unwrap_or(seed),
        }),
    };
    json!({
        "source": source,
        "adversarial": cfg.data.adversarial,
        "tickers": panel.tickers(),
        "days": panel.len(),
        "first_date": panel.dates().first().map(|d| d.to_string()),
        "last_date": panel.dates().last().map(|d| d.to_string()),
    })
}

fn schedule_json(s: &BacktestSchedule, panel: &ReturnsPanel) -> Value {
    json!({
        "lookback": s.lookback,
        "retrain_every": s.retrain_every,
        "start": s.start,
        "end": s.end,
        "start_date": panel.dates()[s.start].to_string(),
        "end_date": panel.dates()[s.end].to_string(),
    })
}

fn config_json(cfg: &RunConfig) -> Value {
    serde_json::to_value(cfg).expect("config serializes")
}

/// Assembled report; `json` already carries the 10-digit rounding.
#[derive(Debug, Clone)]
pub struct BacktestReport {
    pub results: Vec<StrategyResult>,
    pub json: String,
    pub wealth_csv: String,
    pub allocations_csv: String,
    pub gates_csv: Option<String>,
}

pub fn backtest_report(cfg: &RunConfig) -> Result<BacktestReport, CliError> {
    let ids = cfg.strategy_ids()?;
    let seed = cfg.run.seed;
    let panel = cfg.panel(seed)?;
    let schedule = cfg.schedule(&panel)?;
    info!(
        "backtest of {} strategies over days {}..={}",
        ids.len(),
        schedule.start,
        schedule.end
    );
    let results = run_strategies(cfg, &panel, &schedule, &ids, seed)?;
    let dates = panel.dates();
    let names: Vec<String> = results.iter().map(|r| r.id.to_string()).collect();

    let report = json!({
        "command": "backtest",
        "seed": seed,
        "data": data_json(cfg, &panel, seed),
        "schedule": schedule_json(&schedule, &panel),
        "strategies": results.iter().map(|r| strategy_json(r, dates)).collect::<Vec<_>>(),
        "config": config_json(cfg),
    });

    let series_dates = &results[0].run.wealth.dates;
    let wealth: Vec<&[f64]> = results
        .iter()
        .map(|r| r.run.wealth.wealth.as_slice())
        .collect();
    let alloc_rows: Vec<_> = results
        .iter()
        .map(|r| {
            (
                r.id.to_string(),
                r.run.wealth.dates.as_slice(),
                r.run.wealth.allocations.as_slice(),
            )
        })
        .collect();
    let gate_rows: Vec<_> = results
        .iter()
        .flat_map(|r| {
            r.run.training_events.iter().filter_map(move |e| {
                e.gates
                    .as_ref()
                    .map(|g| (r.id.to_string(), dates[e.block_start], g.clone()))
            })
        })
        .collect();

    Ok(BacktestReport {
        json: to_report_json(report),
        wealth_csv: wealth_csv(series_dates, &names, &wealth),
        allocations_csv: allocations_csv(panel.tickers(), &alloc_rows),
        gates_csv: (!gate_rows.is_empty()).then(|| gates_csv(panel.tickers(), &gate_rows)),
        results,
    })
}

/// Runs the backtest command and writes `report.json`, `wealth.csv`,
/// `allocations.csv` and, for gated strategies, `gates.csv`.
pub fn cmd_backtest(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let report = backtest_report(cfg)?;
    let mut dir = OutputDir::create(out)?;
    dir.write("report.json", &report.json)?;
    dir.write("wealth.csv", &report.wealth_csv)?;
    dir.write("allocations.csv", &report.allocations_csv)?;
    if let Some(g) = &report.gates_csv {
        dir.write("gates.csv", g)?;
    }
    Ok(dir.commit())
}

/// Metrics aggregated and tested by the simulation study.
pub const STUDY_METRICS: [&str; 5] = [
    "sharpe",
    "return_over_avg_dd",
    "final_wealth",
    "ann_return",
    "ann_volatility",
];

fn metric(r: &StrategyResult, name: &str) -> Option<f64> {
    let s = r.stats.as_ref();
    match name {
        "sharpe" => s.and_then(|s| s.sharpe),
        "return_over_avg_dd" => s.and_then(|s| s.return_over_avg_dd),
        "calmar" => s.and_then(|s| s.calmar),
        "ann_return" => s.map(|s| s.ann_return),
        "ann_volatility" => s.map(|s| s.ann_volatility),
        "mdd" => s.map(|s| s.mdd),
        "final_wealth" => Some(r.run.wealth.final_wealth()),
        _ => None,
    }
}

/// Per-seed outcome of the simulation study.
#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub results: Result<Vec<StrategyResult>, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub sd: Option<f64>,
}

pub fn summarize(xs: &[f64]) -> Option<Summary> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len();
    Some(Summary {
        n,
        mean: xs.iter().sum::<f64>() / n as f64,
        sd: (n >= 2).then(|| sample_sd(xs)),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedRank {
    pub best: u64,
    pub worst: u64,
    pub median: u64,
}

/// Best, worst and median seed by `values`; the median of an even count is
/// the lower middle.
pub fn rank_seeds(values: &[(u64, f64)]) -> Option<SeedRank> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Some(SeedRank {
        worst: v[0].0,
        best: v[v.len() - 1].0,
        median: v[(v.len() - 1) / 2].0,
    })
}

#[derive(Debug, Clone)]
pub struct SimstudyReport {
    pub seeds: Vec<SeedOutcome>,
    pub strategies: Vec<StrategyId>,
    pub json: Value,
    pub seeds_csv: String,
}

impl SimstudyReport {
    /// Values of `metric` for `strategy` across successful seeds.
    pub fn values(&self, strategy: StrategyId, metric_name: &str) -> Vec<(u64, f64)> {
        self.seeds
            .iter()
            .filter_map(|s| {
                let rs = s.results.as_ref().ok()?;
                let r = rs.iter().find(|r| r.id == strategy)?;
                Some((s.seed, metric(r, metric_name)?))
            })
            .collect()
    }

    pub fn mean(&self, strategy: StrategyId, metric_name: &str) -> Option<f64> {
        let v: Vec<f64> = self
            .values(strategy, metric_name)
            .into_iter()
            .map(|x| x.1)
            .collect();
        summarize(&v).map(|s| s.mean)
    }
}

pub fn simstudy_report(cfg: &RunConfig) -> Result<SimstudyReport, CliError> {
    let seeds = cfg.seed_list();
    if seeds.len() < 2 {
        return Err(CliError::Config("simstudy needs at least two seeds".into()));
    }
    let parse = |s: &str| s.parse::<StrategyId>().map_err(CliError::Config);
    let based = parse(&cfg.simstudy.based)?;
    let free = parse(&cfg.simstudy.free)?;
    let bench = parse(&cfg.simstudy.benchmark)?;
    // Schedule mistakes are configuration errors, not per-seed failures.
    cfg.schedule(&cfg.panel(seeds[0])?)?;
    let mut ids = cfg.strategy_ids()?;
    for id in [based, free, bench] {
        if !ids.contains(&id) {
            ids.push(id);
        }
    }

    let outcomes: Vec<SeedOutcome> = seeds
        .par_iter()
        .map(|&seed| {
            let results = cfg
                .panel(seed)
                .and_then(|p| {
                    let s = cfg.schedule(&p)?;
                    run_strategies(cfg, &p, &s, &ids, seed)
                })
                .map_err(|e| e.to_string());
            if let Err(e) = &results {
                warn!("seed {seed} failed and is excluded from aggregates: {e}");
            }
            SeedOutcome { seed, results }
        })
        .collect();

    let mut report = SimstudyReport {
        seeds: outcomes,
        strategies: ids.clone(),
        json: Value::Null,
        seeds_csv: String::new(),
    };
    let ok = report.seeds.iter().filter(|s| s.results.is_ok()).count();
    if ok < 2 {
        return Err(CliError::Runtime(format!(
            "only {ok} of {} seeds succeeded",
            seeds.len()
        )));
    }

    let aggregates: serde_json::Map<String, Value> = ids
        .iter()
        .map(|&id| {
            let per_metric: serde_json::Map<String, Value> = STUDY_METRICS
                .iter()
                .map(|m| {
                    let v: Vec<f64> = report.values(id, m).into_iter().map(|x| x.1).collect();
                    (m.to_string(), json!(summarize(&v)))
                })
                .collect();
            let ranks = json!(rank_seeds(&report.values(id, "sharpe")));
            (
                id.to_string(),
                json!({"metrics": per_metric, "seeds_by_sharpe": ranks}),
            )
        })
        .collect();

    let low_power = ok < LOW_POWER_SEEDS;
    let hypotheses: serde_json::Map<String, Value> = ["sharpe", "return_over_avg_dd", "final_wealth"]
        .iter()
        .map(|m| {
            let vb = report.values(based, m);
            let vf = report.values(free, m);
            let vr = report.values(bench, m);
            let sb = summarize(&vb.iter().map(|x| x.1).collect::<Vec<_>>());
            let sf = summarize(&vf.iter().map(|x| x.1).collect::<Vec<_>>());
            let sr = summarize(&vr.iter().map(|x| x.1).collect::<Vec<_>>());
            let z1 = match (&sf, &sb) {
                (Some(f), Some(b)) => match (f.sd, b.sd) {
                    (Some(fs), Some(bs)) => ztest_two_sample(f.mean, fs, f.n, b.mean, bs, b.n).ok(),
                    _ => None,
                },
                _ => None,
            };
            let z2 = match (&sb, &sr) {
                (Some(b), Some(r)) => b.sd.and_then(|bs| ztest_one_sample(b.mean, bs, b.n, r.mean).ok()),
                _ => None,
            };
            let paired: Vec<bool> = vb
                .iter()
                .filter_map(|(s, x)| vr.iter().find(|(t, _)| t == s).map(|(_, y)| x > y))
                .collect();
            let beats = paired.iter().filter(|b| **b).count();
            (
                m.to_string(),
                json!({
                    "free_vs_based_z": z1,
                    "based_vs_benchmark_z": z2,
                    "benchmark_mean": sr.map(|s| s.mean),
                    "seeds_beating_benchmark": beats,
                    "seeds_compared": paired.len(),
                    "fraction_beating_benchmark": (!paired.is_empty()).then(|| beats as f64 / paired.len() as f64),
                }),
            )
        })
        .collect();

    let per_seed: Vec<Value> = report
        .seeds
        .iter()
        .map(|s| match &s.results {
            Ok(rs) => json!({
                "seed": s.seed,
                "strategies": rs.iter().map(|r| json!({
                    "name": r.id.to_string(),
                    "stats": stats_json(&r.stats),
                    "final_wealth": r.run.wealth.final_wealth(),
                    "solver_failures": r.run.failures.len(),
                })).collect::<Vec<_>>(),
            }),
            Err(e) => json!({"seed": s.seed, "error": e}),
        })
        .collect();

    report.json = json!({
        "command": "simstudy",
        "seeds": seeds,
        "succeeded": ok,
        "failed": report.seeds.iter().filter(|s| s.results.is_err()).map(|s| s.seed).collect::<Vec<_>>(),
        "based": based.to_string(),
        "free": free.to_string(),
        "benchmark": bench.to_string(),
        "low_power": low_power,
        "aggregates": aggregates,
        "hypotheses": hypotheses,
        "per_seed": per_seed,
        "config": config_json(cfg),
    });
    report.seeds_csv = seeds_csv(&report);
    Ok(report)
}

fn seeds_csv(report: &SimstudyReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header = [
        "seed",
        "strategy",
        "ann_return",
        "ann_volatility",
        "sharpe",
        "mdd",
        "calmar",
        "return_over_avg_dd",
        "final_wealth",
    ];
    w.write_record(header).expect("in-memory CSV");
    let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
    for s in &report.seeds {
        let Ok(rs) = &s.results else { continue };
        for r in rs {
            let st = r.stats.as_ref();
            w.write_record([
                s.seed.to_string(),
                r.id.to_string(),
                opt(st.map(|s| s.ann_return)),
                opt(st.map(|s| s.ann_volatility)),
                opt(st.and_then(|s| s.sharpe)),
                opt(st.map(|s| s.mdd)),
                opt(st.and_then(|s| s.calmar)),
                opt(st.and_then(|s| s.return_over_avg_dd)),
                r.run.wealth.final_wealth().to_string(),
            ])
            .expect("in-memory CSV");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory CSV")).expect("UTF-8")
}

/// Runs the seed sweep and writes `report.json` and `seeds.csv`.
pub fn cmd_simstudy(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let report = simstudy_report(cfg)?;
    let mut dir = OutputDir::create(out)?;
    dir.write("report.json", &to_report_json(report.json.clone()))?;
    dir.write("seeds.csv", &report.seeds_csv)?;
    Ok(dir.commit())
}

/// One hyperparameter cell with its train- and validation-period performance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridCell {
    pub eta: f64,
    pub steps: usize,
    pub train: Option<f64>,
    pub validation: Option<f64>,
    pub error: Option<String>,
}

/// Indices of the best `⌈m/2⌉` cells by `key`, among cells where it is defined.
fn top_half(cells: &[GridCell], key: impl Fn(&GridCell) -> Option<f64>) -> Vec<usize> {
    let mut scored: Vec<(usize, f64)> = cells
        .iter()
        .enumerate()
        .filter_map(|(i, c)| key(c).filter(|v| v.is_finite()).map(|v| (i, v)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let keep = scored.len().div_ceil(2);
    scored.into_iter().take(keep).map(|x| x.0).collect()
}

/// Keeps cells in the top half of both the train and the validation ranking,
/// then picks the best validation score among them. When no cell is in both
/// halves the best validation cell overall is chosen.
pub fn select_hyperparameters(cells: &[GridCell]) -> Option<usize> {
    let train = top_half(cells, |c| c.train);
    let valid = top_half(cells, |c| c.validation);
    let best_val = |idx: &mut dyn Iterator<Item = usize>| {
        idx.max_by(|&a, &b| {
            cells[a]
                .validation
                .unwrap()
                .total_cmp(&cells[b].validation.unwrap())
                .then(b.cmp(&a))
        })
    };
    best_val(&mut valid.iter().copied().filter(|i| train.contains(i)))
        .or_else(|| best_val(&mut valid.iter().copied()))
}

/// Period performance in the units of the training objective: the annualized
/// Sharpe ratio, or the compounded growth factor.
fn period_score(
    run: &BacktestRun,
    from: usize,
    to: usize,
    objective: Objective,
) -> Result<f64, String> {
    let w = run.wealth.slice(from, to).map_err(|e| e.to_string())?;
    match objective {
        Objective::Sharpe => perf_stats(&w, TRADING_DAYS)
            .and_then(|s| s.sharpe())
            .map_err(|e| e.to_string()),
        Objective::CumReturn => Ok(w.final_wealth()),
    }
}

#[derive(Debug, Clone)]
pub struct GridReport {
    pub cells: Vec<GridCell>,
    pub selected: Option<usize>,
    pub json: Value,
}

pub fn gridsearch_report(cfg: &RunConfig) -> Result<GridReport, CliError> {
    if cfg.grid.eta.is_empty() || cfg.grid.steps.is_empty() {
        return Err(CliError::Config(
            "grid.eta and grid.steps must be non-empty".into(),
        ));
    }
    let id: StrategyId = cfg.grid.strategy.parse().map_err(CliError::Config)?;
    let seed = cfg.run.seed;
    let panel = cfg.panel(seed)?;
    let mut schedule = cfg.schedule(&panel)?;
    let (Some(train_end), Some(valid_end)) = (&cfg.grid.train_end, &cfg.grid.validation_end) else {
        return Err(CliError::Config(
            "grid.train_end and grid.validation_end are required".into(),
        ));
    };
    let train_end = resolve_day(&panel, train_end, false)?;
    let valid_end = resolve_day(&panel, valid_end, false)?;
    if train_end < schedule.start + 1 || valid_end < train_end + 2 || valid_end >= panel.len() {
        return Err(CliError::Config(format!(
            "degenerate split: decisions start at day {}, training ends at {train_end}, validation ends at {valid_end}",
            schedule.start
        )));
    }
    schedule.end = valid_end;
    let cache = MarketCache::build(&panel, schedule.end, cfg.train.feature_scale)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let n_train = train_end + 1 - schedule.start;
    let n_all = schedule.n_days();

    let grid: Vec<(f64, usize)> = cfg
        .grid
        .steps
        .iter()
        .flat_map(|&s| cfg.grid.eta.iter().map(move |&e| (e, s)))
        .collect();
    let cells: Vec<GridCell> = grid
        .par_iter()
        .map(|&(eta, steps)| {
            let Strategy::EndToEnd(mut tc) = cfg.strategy(id, seed) else {
                unreachable!("grid strategy is a network")
            };
            tc.eta = eta;
            tc.steps = steps;
            let objective = tc.objective;
            let run = run_backtest_cached(&Strategy::EndToEnd(tc), &panel, &schedule, &cache);
            let mut cell = GridCell {
                eta,
                steps,
                train: None,
                validation: None,
                error: None,
            };
            match run {
                Ok(run) => {
                    let train = period_score(&run, 0, n_train, objective);
                    let valid = period_score(&run, n_train, n_all, objective);
                    cell.error = train.as_ref().err().or(valid.as_ref().err()).cloned();
                    cell.train = train.ok();
                    cell.validation = valid.ok();
                }
                Err(e) => cell.error = Some(e.to_string()),
            }
            cell
        })
        .collect();
    let selected = select_hyperparameters(&cells);
    let json = json!({
        "command": "gridsearch",
        "strategy": id.to_string(),
        "seed": seed,
        "data": data_json(cfg, &panel, seed),
        "train_period": [panel.dates()[schedule.start].to_string(), panel.dates()[train_end].to_string()],
        "validation_period": [panel.dates()[train_end + 1].to_string(), panel.dates()[valid_end].to_string()],
        "cells": cells,
        "selected": selected.map(|i| json!({"eta": cells[i].eta, "steps": cells[i].steps})),
        "config": config_json(cfg),
    });
    Ok(GridReport {
        cells,
        selected,
        json,
    })
}

/// Runs the grid and writes `report.json` and `grid.csv`.
pub fn cmd_gridsearch(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let report = gridsearch_report(cfg)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
    w.write_record(["eta", "steps", "train", "validation", "selected"])
        .expect("in-memory CSV");
    for (i, c) in report.cells.iter().enumerate() {
        w.write_record([
            c.eta.to_string(),
            c.steps.to_string(),
            opt(c.train),
            opt(c.validation),
            u8::from(report.selected == Some(i)).to_string(),
        ])
        .expect("in-memory CSV");
    }
    let grid_csv = String::from_utf8(w.into_inner().expect("in-memory CSV")).expect("UTF-8");
    let mut dir = OutputDir::create(out)?;
    dir.write("report.json", &to_report_json(report.json))?;
    dir.write("grid.csv", &grid_csv)?;
    Ok(dir.commit())
}
