use std::fs;
use std::path::Path;
use std::process::Command;

use riskbudget::data::{etf7_sim_spec, simulate_returns, write_returns};
use riskbudget_cli::report::read_wealth_csv;
use riskbudget_cli::{
    backtest_report, gridsearch_report, select_hyperparameters, simstudy_report, GridCell,
    RunConfig,
};
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_riskbudget"))
}

fn write_panel(dir: &Path, days: usize, seed: u64) -> std::path::PathBuf {
    let p = simulate_returns(&etf7_sim_spec(days, seed)).unwrap();
    let path = dir.join("returns.csv");
    write_returns(&p, fs::File::create(&path).unwrap()).unwrap();
    path
}

#[test]
fn backtest_writes_one_row_per_strategy() {
    let tmp = tempfile::tempdir().unwrap();
    write_panel(tmp.path(), 200, 1);
    let cfg_path = tmp.path().join("run.toml");
    fs::write(
        &cfg_path,
        "[data]\npath = \"returns.csv\"\n[run]\nstrategies = [\"nominal_rp\", \"fix_mix\"]\n[schedule]\nlookback = 60\n",
    )
    .unwrap();
    let out = tmp.path().join("out");
    let status = bin()
        .args(["backtest", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let report: Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let names: Vec<&str> = report["strategies"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["name"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["nominal_rp", "fix_mix"]);
    for s in report["strategies"].as_array().unwrap() {
        assert!(s["stats"]["sharpe"].is_number());
    }
    assert!(out.join("wealth.csv").exists());
    assert!(out.join("allocations.csv").exists());
    assert!(!out.join("gates.csv").exists());
}

#[test]
fn missing_data_file_is_a_config_error_with_no_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("run.toml");
    fs::write(&cfg_path, "[data]\npath = \"absent.csv\"\n").unwrap();
    let out = tmp.path().join("out");
    let result = bin()
        .args(["backtest", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&result.stderr).contains("absent.csv"));
    assert!(!out.exists());
}

#[test]
fn unknown_strategy_flag_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("run.toml");
    fs::write(&cfg_path, "[data]\nsimulate = \"etf7\"\n").unwrap();
    let status = bin()
        .args([
            "backtest",
            "--strategies",
            "nominal_rp,momentum",
            "--config",
        ])
        .arg(&cfg_path)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn schedule_longer_than_data_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    write_panel(tmp.path(), 80, 2);
    let cfg_path = tmp.path().join("run.toml");
    fs::write(
        &cfg_path,
        "[data]\npath = \"returns.csv\"\n[run]\nseed_count = 2\n[schedule]\nlookback = 200\n",
    )
    .unwrap();
    let out = tmp.path().join("out");
    let status = bin()
        .args(["simstudy", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn unwritable_output_is_a_runtime_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("run.toml");
    fs::write(
        &cfg_path,
        "[data]\nsimulate = \"etf7\"\nhorizon = 80\n[run]\nstrategies = [\"fix_mix\"]\n[schedule]\nlookback = 30\n",
    )
    .unwrap();
    let blocker = tmp.path().join("taken");
    fs::write(&blocker, "not a directory").unwrap();
    let status = bin()
        .args(["backtest", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(blocker.join("out"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
    assert_eq!(fs::read_to_string(&blocker).unwrap(), "not a directory");
}

#[test]
fn wealth_csv_matches_memory_and_config_echo_round_trips() {
    let cfg = RunConfig::parse(
        "[data]\nsimulate = \"etf7\"\nhorizon = 140\n[run]\nstrategies = [\"rp_positive\", \"gated_no_filter\"]\n[schedule]\nlookback = 40\nretrain_every = 10\n[train]\nsteps = 3\nhidden = 8\n",
    )
    .unwrap();
    let report = backtest_report(&cfg).unwrap();
    let (dates, names, cols) = read_wealth_csv(&report.wealth_csv).unwrap();
    assert_eq!(names, ["rp_positive", "gated_no_filter"]);
    for (r, col) in report.results.iter().zip(&cols) {
        assert_eq!(dates, r.run.wealth.dates);
        for (a, b) in col.iter().zip(&r.run.wealth.wealth) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
    let json: Value = serde_json::from_str(&report.json).unwrap();
    let echoed: RunConfig = serde_json::from_value(json["config"].clone()).unwrap();
    assert_eq!(echoed, cfg);
    let gates = report.gates_csv.expect("gated strategy writes gates");
    assert_eq!(gates.lines().count(), 1 + 10);
}

#[test]
fn two_seed_study_is_flagged_low_power() {
    let cfg = RunConfig::parse(
        "[data]\nsimulate = \"etf7\"\nhorizon = 120\n[run]\nstrategies = [\"nominal_rp\"]\nseeds = [3, 4]\n[schedule]\nlookback = 40\nretrain_every = 20\n[train]\nsteps = 2\nhidden = 4\n",
    )
    .unwrap();
    let report = simstudy_report(&cfg).unwrap();
    assert_eq!(report.json["low_power"], Value::Bool(true));
    assert_eq!(report.json["succeeded"], 2);
    let h = &report.json["hypotheses"]["sharpe"];
    assert!(h["free_vs_based_z"].is_number());
    assert!(h["based_vs_benchmark_z"].is_number());
    assert_eq!(h["seeds_compared"], 2);
    let names: Vec<String> = report.strategies.iter().map(|s| s.to_string()).collect();
    assert_eq!(names, ["nominal_rp", "model_based", "model_free"]);
}

#[test]
fn gridsearch_runs_every_cell() {
    let cfg = RunConfig::parse(
        "[data]\nsimulate = \"etf7\"\nhorizon = 160\n[schedule]\nlookback = 40\nretrain_every = 20\n[train]\nhidden = 4\n[grid]\neta = [1.0, 5.0]\nsteps = [1, 2]\ntrain_end = 100\nvalidation_end = 159\n",
    )
    .unwrap();
    let report = gridsearch_report(&cfg).unwrap();
    assert_eq!(report.cells.len(), 4);
    assert!(report
        .cells
        .iter()
        .all(|c| c.train.is_some() && c.validation.is_some()));
    assert!(report.selected.is_some());

    let bad = RunConfig::parse(
        "[data]\nsimulate = \"etf7\"\nhorizon = 160\n[schedule]\nlookback = 40\n[grid]\ntrain_end = 100\nvalidation_end = 101\n",
    )
    .unwrap();
    assert!(matches!(
        gridsearch_report(&bad),
        Err(riskbudget_cli::CliError::Config(_))
    ));
}

fn table(rows: &[(f64, usize, f64, f64)]) -> Vec<GridCell> {
    rows.iter()
        .map(|&(eta, steps, train, validation)| GridCell {
            eta,
            steps,
            train: Some(train),
            validation: Some(validation),
            error: None,
        })
        .collect()
}

#[test]
fn selection_rule_on_sharpe_table() {
    let cells = table(&[
        (50.0, 5, 0.9787, 0.4153),
        (100.0, 5, 1.0331, 0.3739),
        (150.0, 5, 0.9760, 0.4399),
        (200.0, 5, 0.7501, -0.1497),
        (300.0, 5, 0.9888, 0.6413),
        (500.0, 5, 0.8164, -0.0293),
        (50.0, 10, 1.0386, 0.3697),
        (100.0, 10, 0.8861, 0.1702),
        (150.0, 10, 1.1842, 0.9892),
        (200.0, 10, 1.0707, -0.6818),
        (300.0, 10, 1.3672, 0.8938),
        (500.0, 10, 0.5427, 0.6792),
        (50.0, 25, 1.1667, 0.5162),
        (100.0, 25, 0.8921, 0.7556),
        (150.0, 25, 1.1419, 0.4853),
        (200.0, 25, 1.3760, -0.4079),
        (300.0, 25, 1.1923, 0.3381),
        (500.0, 25, 0.2712, 0.1384),
        (50.0, 50, 1.2855, 0.7015),
        (100.0, 50, 1.0202, 0.5708),
        (150.0, 50, 1.2534, 0.5965),
        (200.0, 50, 1.0167, -0.4878),
        (300.0, 50, 0.7900, 0.4576),
        (500.0, 50, 0.2073, 0.0693),
    ]);
    let i = select_hyperparameters(&cells).unwrap();
    assert_eq!((cells[i].eta, cells[i].steps), (150.0, 10));
}

#[test]
fn selection_rule_on_cumulative_return_table() {
    let cells = table(&[
        (50.0, 5, 1.1289, 1.0288),
        (100.0, 5, 1.1237, 1.0243),
        (150.0, 5, 1.1497, 1.0211),
        (200.0, 5, 1.1458, 1.0279),
        (300.0, 5, 1.0662, 1.0236),
        (500.0, 5, 1.0897, 1.0110),
        (50.0, 10, 1.1407, 1.0240),
        (100.0, 10, 1.1174, 1.0231),
        (150.0, 10, 1.1612, 1.0095),
        (200.0, 10, 1.0918, 1.0135),
        (300.0, 10, 1.0874, 1.0246),
        (500.0, 10, 1.1060, 1.0306),
        (50.0, 25, 1.1412, 1.0229),
        (100.0, 25, 1.1247, 1.0246),
        (150.0, 25, 1.1626, 1.0183),
        (200.0, 25, 1.1793, 1.0364),
        (300.0, 25, 1.1427, 1.0671),
        (500.0, 25, 1.1143, 0.9910),
        (50.0, 50, 1.1357, 1.0233),
        (100.0, 50, 1.1354, 1.0240),
        (150.0, 50, 1.1652, 1.0214),
        (200.0, 50, 1.1975, 1.0540),
        (300.0, 50, 1.1178, 1.0865),
        (500.0, 50, 1.1297, 0.9748),
    ]);
    let i = select_hyperparameters(&cells).unwrap();
    assert_eq!((cells[i].eta, cells[i].steps), (300.0, 25));
}
