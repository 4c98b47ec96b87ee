//! Run configuration: a TOML file of flat sections, one per concern.
//!
//! ```toml
//! [data]
//! simulate = "etf7"
//! horizon = 325
//!
//! [run]
//! strategies = ["nominal_rp", "model_free", "model_based"]
//! seed_count = 20
//!
//! [schedule]
//! lookback = 150
//! retrain_every = 5
//!
//! [train]
//! eta = 10.0
//! steps = 50
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use riskbudget::benchmarks::{BenchmarkKind, BenchmarkSpec};
use riskbudget::data::{
    append_random_asset, etf7_sim_spec, load_returns, simulate_returns, ReturnsPanel,
};
use riskbudget::{Architecture, BacktestSchedule, Objective, Strategy, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub run: RunSection,
    pub schedule: ScheduleConfig,
    pub train: TrainSection,
    pub benchmarks: BenchmarkSection,
    pub simstudy: SimstudySection,
    pub grid: GridSection,
}

/// Market data: a wide CSV of daily returns, or a simulated market.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Returns file; relative paths resolve against the config file's directory.
    pub path: Option<PathBuf>,
    /// Simulation preset; only `"etf7"` is available.
    pub simulate: Option<String>,
    pub horizon: usize,
    /// Simulation seed. When unset, each run seed draws its own path.
    pub seed: Option<u64>,
    /// Append a low-volatility asset with negative drift.
    pub adversarial: bool,
    pub adversarial_mean: f64,
    pub adversarial_sd: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            path: None,
            simulate: None,
            horizon: 325,
            seed: None,
            adversarial: false,
            adversarial_mean: -0.0005,
            adversarial_sd: 0.0005,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub strategies: Vec<String>,
    /// Training seed for `backtest`, and the first seed of a sweep.
    pub seed: u64,
    /// Explicit seed list for `simstudy`; overrides `seed`/`seed_count`.
    pub seeds: Option<Vec<u64>>,
    pub seed_count: usize,
    pub out: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            strategies: vec!["nominal_rp".into(), "model_based".into()],
            seed: 0,
            seeds: None,
            seed_count: 20,
            out: PathBuf::from("out"),
        }
    }
}

/// A day given either as a row index or as an ISO date (first trading day on
/// or after it for starts, last on or before it for ends).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DayRef {
    Index(usize),
    Date(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub lookback: usize,
    pub retrain_every: usize,
    pub start: Option<DayRef>,
    pub end: Option<DayRef>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            lookback: 150,
            retrain_every: 5,
            start: None,
            end: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub hidden: usize,
    pub eta: f64,
    pub eta_mu: f64,
    pub steps: usize,
    pub objective: Objective,
    pub gate_sigma: f64,
    pub gate_init: f64,
    pub warm_start: bool,
    pub feature_scale: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            hidden: d.hidden,
            eta: d.eta,
            eta_mu: d.eta_mu,
            steps: d.steps,
            objective: d.objective,
            gate_sigma: d.gate_sigma,
            gate_init: d.gate_init,
            warm_start: d.warm_start,
            feature_scale: d.feature_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSection {
    pub k: usize,
    pub screen_lookback: usize,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        Self {
            k: 4,
            screen_lookback: 30,
        }
    }
}

/// Strategies compared by the simulation study's hypothesis tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimstudySection {
    pub based: String,
    pub free: String,
    pub benchmark: String,
}

impl Default for SimstudySection {
    fn default() -> Self {
        Self {
            based: "model_based".into(),
            free: "model_free".into(),
            benchmark: "nominal_rp".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub strategy: String,
    pub eta: Vec<f64>,
    pub steps: Vec<usize>,
    /// Last decision day of the training period.
    pub train_end: Option<DayRef>,
    /// Last decision day of the validation period.
    pub validation_end: Option<DayRef>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            strategy: "model_based".into(),
            eta: vec![50.0, 100.0, 150.0, 200.0, 300.0, 500.0],
            steps: vec![5, 10, 25, 50],
            train_end: None,
            validation_end: None,
        }
    }
}

/// A strategy name as written in configs: a benchmark (`nominal_rp`,
/// `fix_mix`, `rp_positive`, `rp_topk`) or a network architecture
/// (`model_free`, `model_based`, `gated_filter`, `gated_no_filter`),
/// optionally suffixed with `:sharpe` or `:cum_return`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StrategyId {
    Benchmark(BenchmarkKind),
    Network {
        architecture: Architecture,
        objective: Option<Objective>,
    },
}

impl FromStr for StrategyId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (base, objective) = match s.split_once(':') {
            Some((b, "sharpe")) => (b, Some(Objective::Sharpe)),
            Some((b, "cum_return")) => (b, Some(Objective::CumReturn)),
            Some((_, o)) => return Err(format!("unknown objective `{o}` in strategy `{s}`")),
            None => (s, None),
        };
        let network = |architecture| StrategyId::Network {
            architecture,
            objective,
        };
        let id = match base {
            "nominal_rp" => StrategyId::Benchmark(BenchmarkKind::NominalRp),
            "fix_mix" => StrategyId::Benchmark(BenchmarkKind::FixMix),
            "rp_positive" => StrategyId::Benchmark(BenchmarkKind::RpPositive),
            "rp_topk" => StrategyId::Benchmark(BenchmarkKind::RpTopk),
            "model_free" => network(Architecture::ModelFree),
            "model_based" => network(Architecture::ModelBased),
            "gated_filter" => network(Architecture::GatedFilter),
            "gated_no_filter" => network(Architecture::GatedNoFilter),
            _ => return Err(format!("unknown strategy `{s}`")),
        };
        if matches!(id, StrategyId::Benchmark(_)) && objective.is_some() {
            return Err(format!("benchmark `{base}` takes no objective"));
        }
        Ok(id)
    }
}

impl fmt::Display for StrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let base = match self {
            StrategyId::Benchmark(BenchmarkKind::NominalRp) => "nominal_rp",
            StrategyId::Benchmark(BenchmarkKind::FixMix) => "fix_mix",
            StrategyId::Benchmark(BenchmarkKind::RpPositive) => "rp_positive",
            StrategyId::Benchmark(BenchmarkKind::RpTopk) => "rp_topk",
            StrategyId::Network { architecture, .. } => match architecture {
                Architecture::ModelFree => "model_free",
                Architecture::ModelBased => "model_based",
                Architecture::GatedFilter => "gated_filter",
                Architecture::GatedNoFilter => "gated_no_filter",
            },
        };
        f.write_str(base)?;
        match self {
            StrategyId::Network {
                objective: Some(Objective::Sharpe),
                ..
            } => f.write_str(":sharpe"),
            StrategyId::Network {
                objective: Some(Objective::CumReturn),
                ..
            } => f.write_str(":cum_return"),
            _ => Ok(()),
        }
    }
}

impl RunConfig {
    /// Reads and validates a config file; relative data paths are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        if let Some(p) = cfg.data.path.as_mut() {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn strategy_ids(&self) -> Result<Vec<StrategyId>, CliError> {
        let ids = self
            .run
            .strategies
            .iter()
            .map(|s| s.parse().map_err(CliError::Config))
            .collect::<Result<Vec<StrategyId>, _>>()?;
        for (i, id) in ids.iter().enumerate() {
            if ids[..i].contains(id) {
                return Err(CliError::Config(format!("strategy `{id}` listed twice")));
            }
        }
        Ok(ids)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        match (&self.data.path, &self.data.simulate) {
            (Some(_), Some(_)) => {
                return bad("set either data.path or data.simulate, not both".into())
            }
            (None, None) => return bad("no data source: set data.path or data.simulate".into()),
            (Some(p), None) if !p.is_file() => {
                return bad(format!("data file {} does not exist", p.display()))
            }
            (None, Some(name)) if name != "etf7" => {
                return bad(format!("unknown simulation preset `{name}`"))
            }
            _ => {}
        }
        if self.data.simulate.is_some() && self.data.horizon < 2 {
            return bad("data.horizon must be at least 2".into());
        }
        if self.data.adversarial && !(self.data.adversarial_sd >= 0.0) {
            return bad("data.adversarial_sd must be nonnegative".into());
        }
        if self.strategy_ids()?.is_empty() {
            return bad("run.strategies is empty".into());
        }
        if self.schedule.retrain_every == 0 || self.schedule.lookback < 2 {
            return bad("schedule.lookback must be ≥ 2 and schedule.retrain_every ≥ 1".into());
        }
        if self.benchmarks.screen_lookback == 0 || self.benchmarks.k == 0 {
            return bad("benchmarks.k and benchmarks.screen_lookback must be positive".into());
        }
        self.train_config(Architecture::ModelBased, None, 0)
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        for name in [
            &self.simstudy.based,
            &self.simstudy.free,
            &self.simstudy.benchmark,
        ] {
            name.parse::<StrategyId>().map_err(CliError::Config)?;
        }
        match self
            .grid
            .strategy
            .parse::<StrategyId>()
            .map_err(CliError::Config)?
        {
            StrategyId::Network { .. } => {}
            StrategyId::Benchmark(_) => {
                return bad("grid.strategy must be a network strategy".into())
            }
        }
        if self.grid.eta.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return bad("grid.eta values must be positive".into());
        }
        Ok(())
    }

    pub fn train_config(
        &self,
        architecture: Architecture,
        objective: Option<Objective>,
        seed: u64,
    ) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            hidden: t.hidden,
            eta: t.eta,
            eta_mu: t.eta_mu,
            steps: t.steps,
            lookback: self.schedule.lookback,
            retrain_every: self.schedule.retrain_every,
            objective: objective.unwrap_or(t.objective),
            architecture,
            gate_sigma: t.gate_sigma,
            gate_init: t.gate_init,
            seed,
            warm_start: t.warm_start,
            feature_scale: t.feature_scale,
        }
    }

    pub fn strategy(&self, id: StrategyId, seed: u64) -> Strategy {
        match id {
            StrategyId::Benchmark(kind) => Strategy::Benchmark(BenchmarkSpec {
                kind,
                k: self.benchmarks.k,
                lookback: self.benchmarks.screen_lookback,
            }),
            StrategyId::Network {
                architecture,
                objective,
            } => Strategy::EndToEnd(self.train_config(architecture, objective, seed)),
        }
    }

    /// Seeds of a sweep, in order.
    pub fn seed_list(&self) -> Vec<u64> {
        match &self.run.seeds {
            Some(s) => s.clone(),
            None => (0..self.run.seed_count as u64)
                .map(|i| self.run.seed.wrapping_add(i))
                .collect(),
        }
    }

    /// Loads or simulates the market for a run with training seed `seed`.
    pub fn panel(&self, seed: u64) -> Result<ReturnsPanel, CliError> {
        let data_seed = self.data.seed.unwrap_or(seed);
        let mut panel = match &self.data.path {
            Some(p) => load_returns(p).map_err(|e| CliError::Config(e.to_string()))?,
            None => simulate_returns(&etf7_sim_spec(self.data.horizon, data_seed))
                .map_err(|e| CliError::Runtime(e.to_string()))?,
        };
        if self.data.adversarial {
            panel = append_random_asset(
                &panel,
                self.data.adversarial_mean,
                self.data.adversarial_sd,
                data_seed ^ 0x5eed_0ad5,
                "ADV",
            )
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        }
        Ok(panel)
    }

    pub fn schedule(&self, panel: &ReturnsPanel) -> Result<BacktestSchedule, CliError> {
        let mut s = BacktestSchedule::full(
            self.schedule.lookback,
            self.schedule.retrain_every,
            panel.len(),
        );
        if let Some(start) = &self.schedule.start {
            s.start = resolve_day(panel, start, true)?;
        }
        if let Some(end) = &self.schedule.end {
            s.end = resolve_day(panel, end, false)?;
        }
        s.validate(panel.len())
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(s)
    }
}

pub fn resolve_day(panel: &ReturnsPanel, day: &DayRef, start: bool) -> Result<usize, CliError> {
    match day {
        DayRef::Index(i) => Ok(*i),
        DayRef::Date(s) => {
            let d = NaiveDate::parse_from_str(s, "%Y-%m-%d")
                .map_err(|e| CliError::Config(format!("bad date `{s}`: {e}")))?;
            let found = if start {
                panel.index_on_or_after(d)
            } else {
                panel.index_on_or_before(d)
            };
            found.ok_or_else(|| CliError::Config(format!("date {s} is outside the data")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_names_round_trip() {
        for s in [
            "nominal_rp",
            "fix_mix",
            "rp_positive",
            "rp_topk",
            "model_free",
            "model_based",
            "gated_filter",
            "gated_no_filter",
            "model_based:cum_return",
            "gated_filter:sharpe",
        ] {
            assert_eq!(s.parse::<StrategyId>().unwrap().to_string(), s);
        }
        assert!("nominal_rp:sharpe".parse::<StrategyId>().is_err());
        assert!("model_based:calmar".parse::<StrategyId>().is_err());
        assert!("momentum".parse::<StrategyId>().is_err());
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = RunConfig::parse("[data]\nsimulate = \"etf7\"\n").unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.schedule.lookback, 150);
        assert_eq!(cfg.train.steps, 50);
        assert_eq!(cfg.seed_list().len(), 20);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        assert!(matches!(
            RunConfig::parse("[train]\nlearning_rate = 3.0\n"),
            Err(CliError::Config(_))
        ));
        let cfg = RunConfig::parse("[data]\nsimulate = \"etf7\"\n[train]\neta = -1.0\n").unwrap();
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
        let cfg = RunConfig::parse("[data]\npath = \"/nonexistent/returns.csv\"\n").unwrap();
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
        let cfg = RunConfig::parse(
            "[data]\nsimulate = \"etf7\"\n[run]\nstrategies = [\"fix_mix\", \"fix_mix\"]\n",
        )
        .unwrap();
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
    }

    #[test]
    fn echo_round_trips() {
        let text = "[data]\nsimulate = \"etf7\"\nhorizon = 200\n[schedule]\nend = \"2000-06-30\"\n[grid]\ntrain_end = 120\n";
        let cfg = RunConfig::parse(text).unwrap();
        let echoed = toml::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::parse(&echoed).unwrap(), cfg);
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&json).unwrap(), cfg);
    }

    #[test]
    fn dates_resolve_to_trading_days() {
        let cfg = RunConfig::parse("[data]\nsimulate = \"etf7\"\nhorizon = 60\n").unwrap();
        let p = cfg.panel(0).unwrap();
        // 2000-01-08 is a Saturday.
        let d = DayRef::Date("2000-01-08".into());
        assert_eq!(resolve_day(&p, &d, true).unwrap(), 5);
        assert_eq!(resolve_day(&p, &d, false).unwrap(), 4);
    }
}
