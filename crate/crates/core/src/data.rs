//! Daily return panels, model features and simulated markets.

use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use thiserror::Error;

/// Longest lookback used by the feature set (and the default covariance window).
pub const FEATURE_HISTORY: usize = 30;

/// Number of features per asset: 5 lags, 3 means, 3 volatilities.
pub const FEATURES_PER_ASSET: usize = 11;

const LAGS: usize = 5;
const WINDOWS: [usize; 3] = [10, 20, 30];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("header must start with `date` followed by at least one ticker")]
    BadHeader,
    #[error("missing value at row {row}, ticker {ticker}")]
    MissingValue { row: usize, ticker: String },
    #[error("row {row}: expected {expected} fields, found {found}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}: invalid date `{value}`")]
    BadDate { row: usize, value: String },
    #[error("row {row}, ticker {ticker}: invalid number `{value}`")]
    BadNumber {
        row: usize,
        ticker: String,
        value: String,
    },
    #[error("dates not strictly increasing at row {row} ({date})")]
    NonMonotoneDates { row: usize, date: NaiveDate },
    #[error("return at row {row}, ticker {ticker} is {value}; returns must be finite and > -1")]
    InvalidReturn {
        row: usize,
        ticker: String,
        value: f64,
    },
    #[error("panel has no rows")]
    Empty,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("day {t} needs at least {needed} days of history")]
    InsufficientHistory { t: usize, needed: usize },
    #[error("day index {t} out of range for panel of length {len}")]
    OutOfRange { t: usize, len: usize },
    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),
}

/// Dated T×n matrix of daily simple returns.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsPanel {
    dates: Vec<NaiveDate>,
    tickers: Vec<String>,
    returns: DMatrix<f64>,
}

impl ReturnsPanel {
    pub fn new(
        dates: Vec<NaiveDate>,
        tickers: Vec<String>,
        returns: DMatrix<f64>,
    ) -> Result<Self, DataError> {
        if dates.is_empty() {
            return Err(DataError::Empty);
        }
        if tickers.is_empty() {
            return Err(DataError::Shape("panel needs at least one asset".into()));
        }
        if returns.nrows() != dates.len() || returns.ncols() != tickers.len() {
            return Err(DataError::Shape(format!(
                "returns are {}x{}, expected {}x{}",
                returns.nrows(),
                returns.ncols(),
                dates.len(),
                tickers.len()
            )));
        }
        for (i, w) in dates.windows(2).enumerate() {
            if w[1] <= w[0] {
                return Err(DataError::NonMonotoneDates {
                    row: i + 2,
                    date: w[1],
                });
            }
        }
        for t in 0..returns.nrows() {
            for (j, ticker) in tickers.iter().enumerate() {
                let v = returns[(t, j)];
                if !v.is_finite() || v <= -1.0 {
                    return Err(DataError::InvalidReturn {
                        row: t + 1,
                        ticker: ticker.clone(),
                        value: v,
                    });
                }
            }
        }
        Ok(Self {
            dates,
            tickers,
            returns,
        })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn n_assets(&self) -> usize {
        self.tickers.len()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn returns(&self) -> &DMatrix<f64> {
        &self.returns
    }

    pub fn get(&self, t: usize, asset: usize) -> f64 {
        self.returns[(t, asset)]
    }

    /// Asset returns realized on day `t`.
    pub fn day(&self, t: usize) -> DVector<f64> {
        self.returns.row(t).transpose()
    }

    /// Overwrites one entry. Used by mutation tests; keeps the panel invariants.
    pub fn set(&mut self, t: usize, asset: usize, value: f64) -> Result<(), DataError> {
        if !value.is_finite() || value <= -1.0 {
            return Err(DataError::InvalidReturn {
                row: t + 1,
                ticker: self.tickers[asset].clone(),
                value,
            });
        }
        self.returns[(t, asset)] = value;
        Ok(())
    }

    /// Index of the first date on or after `date`.
    pub fn index_on_or_after(&self, date: NaiveDate) -> Option<usize> {
        let i = self.dates.partition_point(|d| *d < date);
        (i < self.dates.len()).then_some(i)
    }

    /// Index of the last date on or before `date`.
    pub fn index_on_or_before(&self, date: NaiveDate) -> Option<usize> {
        self.dates.partition_point(|d| *d <= date).checked_sub(1)
    }
}

/// Reads a wide CSV: header `date,T1,...,Tn`, one ISO date plus n decimal
/// returns per row.
pub fn load_returns(path: impl AsRef<Path>) -> Result<ReturnsPanel, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_returns(file)
}

pub fn parse_returns<R: std::io::Read>(reader: R) -> Result<ReturnsPanel, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() < 2 || !header[0].eq_ignore_ascii_case("date") {
        return Err(DataError::BadHeader);
    }
    let tickers: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    let n = tickers.len();

    let mut dates = Vec::new();
    let mut values = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 1;
        if record.len() != n + 1 {
            // A short row is a missing trailing cell.
            if record.len() < n + 1 && !record.is_empty() {
                return Err(DataError::MissingValue {
                    row,
                    ticker: tickers[record.len() - 1].clone(),
                });
            }
            return Err(DataError::RaggedRow {
                row,
                expected: n + 1,
                found: record.len(),
            });
        }
        let date =
            NaiveDate::parse_from_str(&record[0], "%Y-%m-%d").map_err(|_| DataError::BadDate {
                row,
                value: record[0].to_owned(),
            })?;
        dates.push(date);
        for (j, cell) in record.iter().skip(1).enumerate() {
            if cell.is_empty() {
                return Err(DataError::MissingValue {
                    row,
                    ticker: tickers[j].clone(),
                });
            }
            let v: f64 = cell.parse().map_err(|_| DataError::BadNumber {
                row,
                ticker: tickers[j].clone(),
                value: cell.to_owned(),
            })?;
            values.push(v);
        }
    }
    if dates.is_empty() {
        return Err(DataError::Empty);
    }
    let t = dates.len();
    let returns = DMatrix::from_row_slice(t, n, &values);
    ReturnsPanel::new(dates, tickers, returns)
}

/// Writes a panel in the same wide CSV layout `load_returns` reads.
pub fn write_returns<W: std::io::Write>(panel: &ReturnsPanel, writer: W) -> Result<(), DataError> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["date".to_owned()];
    header.extend(panel.tickers.iter().cloned());
    wtr.write_record(&header)?;
    for (t, date) in panel.dates.iter().enumerate() {
        let mut row = vec![date.format("%Y-%m-%d").to_string()];
        row.extend((0..panel.n_assets()).map(|j| panel.get(t, j).to_string()));
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(|source| DataError::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}

/// Model input for day `t`, built only from returns before `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: DVector<f64>,
    pub as_of: usize,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Per asset, in order: returns on days t-1..t-5, arithmetic means over the
/// last 10/20/30 days, then sample standard deviations over the same windows.
pub fn build_features(panel: &ReturnsPanel, t: usize) -> Result<FeatureVector, DataError> {
    if t >= panel.len() {
        return Err(DataError::OutOfRange {
            t,
            len: panel.len(),
        });
    }
    if t < FEATURE_HISTORY {
        return Err(DataError::InsufficientHistory {
            t,
            needed: FEATURE_HISTORY,
        });
    }
    let n = panel.n_assets();
    let mut values = DVector::zeros(FEATURES_PER_ASSET * n);
    for j in 0..n {
        let base = j * FEATURES_PER_ASSET;
        for lag in 0..LAGS {
            values[base + lag] = panel.get(t - 1 - lag, j);
        }
        for (k, &w) in WINDOWS.iter().enumerate() {
            let (mean, sd) = window_mean_sd(panel, j, t - w, t);
            values[base + LAGS + k] = mean;
            values[base + LAGS + WINDOWS.len() + k] = sd;
        }
    }
    Ok(FeatureVector { values, as_of: t })
}

fn window_mean_sd(panel: &ReturnsPanel, asset: usize, from: usize, to: usize) -> (f64, f64) {
    let m = (to - from) as f64;
    let mean = (from..to).map(|s| panel.get(s, asset)).sum::<f64>() / m;
    let ss: f64 = (from..to)
        .map(|s| {
            let d = panel.get(s, asset) - mean;
            d * d
        })
        .sum();
    (mean, (ss / (m - 1.0)).sqrt())
}

/// Parameters of an i.i.d. multivariate-normal daily return simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct SimSpec {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub horizon: usize,
    pub seed: u64,
    pub tickers: Option<Vec<String>>,
}

impl SimSpec {
    fn validate(&self) -> Result<DMatrix<f64>, DataError> {
        let n = self.mean.len();
        if n == 0 {
            return Err(DataError::InvalidSpec("no assets".into()));
        }
        if self.cov.nrows() != n || self.cov.ncols() != n {
            return Err(DataError::InvalidSpec(format!(
                "covariance is {}x{}, mean has length {n}",
                self.cov.nrows(),
                self.cov.ncols()
            )));
        }
        if self.horizon == 0 {
            return Err(DataError::InvalidSpec("horizon must be at least 1".into()));
        }
        let scale = self.cov.amax().max(f64::MIN_POSITIVE);
        for i in 0..n {
            for j in 0..i {
                if (self.cov[(i, j)] - self.cov[(j, i)]).abs() > 1e-12 * scale {
                    return Err(DataError::InvalidSpec("covariance is not symmetric".into()));
                }
            }
        }
        let eig = SymmetricEigen::new(self.cov.clone());
        let min = eig.eigenvalues.min();
        if min < -1e-10 * scale {
            return Err(DataError::InvalidSpec(format!(
                "covariance is not positive semi-definite (smallest eigenvalue {min:e})"
            )));
        }
        // Factor with clipped eigenvalues so singular covariances still sample.
        let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots))
    }
}

/// Draws `horizon` i.i.d. days from N(mean, cov). Dates are consecutive
/// weekdays starting 2000-01-03.
pub fn simulate_returns(spec: &SimSpec) -> Result<ReturnsPanel, DataError> {
    let factor = spec.validate()?;
    let n = spec.mean.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut returns = DMatrix::zeros(spec.horizon, n);
    let mut shock = DVector::zeros(n);
    for t in 0..spec.horizon {
        for v in shock.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let draw = &spec.mean + &factor * &shock;
        returns.set_row(t, &draw.transpose());
    }
    let tickers = match &spec.tickers {
        Some(t) if t.len() == n => t.clone(),
        Some(_) => return Err(DataError::InvalidSpec("ticker count mismatch".into())),
        None => (1..=n).map(|i| format!("A{i}")).collect(),
    };
    ReturnsPanel::new(weekdays(spec.horizon), tickers, returns)
}

fn weekdays(count: usize) -> Vec<NaiveDate> {
    let mut d = NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date");
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d += Duration::days(1);
    }
    out
}

/// Appends an i.i.d. Normal(mu, sigma²) column named `ticker`.
pub fn append_random_asset(
    panel: &ReturnsPanel,
    mu: f64,
    sigma: f64,
    seed: u64,
    ticker: &str,
) -> Result<ReturnsPanel, DataError> {
    if !(sigma >= 0.0) || !mu.is_finite() || !sigma.is_finite() {
        return Err(DataError::InvalidSpec(format!(
            "random asset needs finite mu and sigma >= 0, got ({mu}, {sigma})"
        )));
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = panel.len();
    let column = DVector::from_iterator(t, (0..t).map(|_| mu + sigma * normal.sample(&mut rng)));
    let mut returns = panel.returns.clone().insert_column(panel.n_assets(), 0.0);
    returns.set_column(panel.n_assets(), &column);
    let mut tickers = panel.tickers.clone();
    tickers.push(ticker.to_owned());
    ReturnsPanel::new(panel.dates.clone(), tickers, returns)
}

/// Tickers of the seven-ETF universe used for the calibrated simulation.
pub const ETF7_TICKERS: [&str; 7] = ["VTI", "IWM", "AGG", "LQD", "MUB", "DBC", "GLD"];

/// Expected daily returns of the calibrated seven-asset simulation.
pub const ETF7_DAILY_MEAN: [f64; 7] = [
    0.000_59, 0.000_13, -0.000_11, 0.000_22, 0.000_56, 0.000_17, 0.000_17,
];

/// Annualized volatilities of the seven ETFs over 2011-2021.
pub const ETF7_ANNUAL_VOL: [f64; 7] = [0.1759, 0.2194, 0.0401, 0.0724, 0.0514, 0.1611, 0.1584];

/// Assumed long-run correlation structure of the seven ETFs.
#[rustfmt::skip]
pub const ETF7_CORRELATION: [[f64; 7]; 7] = [
    [ 1.00,  0.88, -0.15,  0.15,  0.00,  0.45,  0.05],
    [ 0.88,  1.00, -0.18,  0.10, -0.03,  0.42,  0.04],
    [-0.15, -0.18,  1.00,  0.80,  0.55, -0.10,  0.30],
    [ 0.15,  0.10,  0.80,  1.00,  0.55,  0.05,  0.28],
    [ 0.00, -0.03,  0.55,  0.55,  1.00, -0.05,  0.20],
    [ 0.45,  0.42, -0.10,  0.05, -0.05,  1.00,  0.30],
    [ 0.05,  0.04,  0.30,  0.28,  0.20,  0.30,  1.00],
];

/// Daily covariance of the calibrated seven-asset simulation.
pub fn etf7_covariance() -> DMatrix<f64> {
    let vol: Vec<f64> = ETF7_ANNUAL_VOL.iter().map(|v| v / 252f64.sqrt()).collect();
    DMatrix::from_fn(7, 7, |i, j| ETF7_CORRELATION[i][j] * vol[i] * vol[j])
}

/// Simulation spec with the seven-ETF calibrated mean and covariance.
pub fn etf7_sim_spec(horizon: usize, seed: u64) -> SimSpec {
    SimSpec {
        mean: DVector::from_column_slice(&ETF7_DAILY_MEAN),
        cov: etf7_covariance(),
        horizon,
        seed,
        tickers: Some(ETF7_TICKERS.iter().map(|s| s.to_string()).collect()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn panel_from(rows: &[&[f64]]) -> ReturnsPanel {
        let t = rows.len();
        let n = rows[0].len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        ReturnsPanel::new(
            weekdays(t),
            (0..n).map(|i| format!("A{i}")).collect(),
            DMatrix::from_row_slice(t, n, &flat),
        )
        .unwrap()
    }

    fn constant_panel(t: usize, values: &[f64]) -> ReturnsPanel {
        let rows: Vec<&[f64]> = (0..t).map(|_| values).collect();
        panel_from(&rows)
    }

    #[test]
    fn parses_well_formed_file() {
        let csv =
            "date,VTI,AGG\n2020-01-02,0.01,-0.002\n2020-01-03,0.0,0.001\n2020-01-06,-0.02,0.003\n";
        let p = parse_returns(csv.as_bytes()).unwrap();
        assert_eq!(p.len(), 3);
        assert_eq!(p.n_assets(), 2);
        assert_eq!(p.tickers(), &["VTI".to_string(), "AGG".to_string()]);
        assert_eq!(p.get(2, 0), -0.02);
    }

    #[test]
    fn blank_cell_names_row_and_ticker() {
        let csv = "date,VTI,AGG\n2020-01-02,0.01,0.002\n2020-01-03,0.01,\n";
        match parse_returns(csv.as_bytes()) {
            Err(DataError::MissingValue { row, ticker }) => {
                assert_eq!(row, 2);
                assert_eq!(ticker, "AGG");
            }
            other => panic!("unexpected {other:?}"),
        }
        let csv = "date,VTI,AGG\n2020-01-02,0.01,0.002\n2020-01-03,,0.01\n";
        assert!(matches!(
            parse_returns(csv.as_bytes()),
            Err(DataError::MissingValue { row: 2, ref ticker }) if ticker == "VTI"
        ));
    }

    #[test]
    fn single_cell_panel() {
        let p = parse_returns("date,X\n2021-03-01,0.5\n".as_bytes()).unwrap();
        assert_eq!((p.len(), p.n_assets()), (1, 1));
    }

    #[test]
    fn rejects_non_monotone_dates_and_total_loss() {
        let csv = "date,X\n2021-03-02,0.1\n2021-03-01,0.1\n";
        assert!(matches!(
            parse_returns(csv.as_bytes()),
            Err(DataError::NonMonotoneDates { row: 2, .. })
        ));
        let csv = "date,X\n2021-03-02,-1.0\n";
        assert!(matches!(
            parse_returns(csv.as_bytes()),
            Err(DataError::InvalidReturn { .. })
        ));
        assert!(matches!(
            parse_returns("date,X\n".as_bytes()),
            Err(DataError::Empty)
        ));
        assert!(matches!(
            parse_returns("when,X\n2021-01-01,0.1\n".as_bytes()),
            Err(DataError::BadHeader)
        ));
    }

    #[test]
    fn csv_write_read_round_trip() {
        let p = simulate_returns(&etf7_sim_spec(40, 3)).unwrap();
        let mut buf = Vec::new();
        write_returns(&p, &mut buf).unwrap();
        let q = parse_returns(buf.as_slice()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn feature_length_is_eleven_per_asset() {
        let p = simulate_returns(&etf7_sim_spec(60, 1)).unwrap();
        assert_eq!(build_features(&p, 30).unwrap().len(), 77);
        assert_eq!(build_features(&p, 59).unwrap().len(), 77);
    }

    #[test]
    fn feature_history_errors() {
        let p = constant_panel(40, &[0.01]);
        assert!(matches!(
            build_features(&p, 29),
            Err(DataError::InsufficientHistory { t: 29, .. })
        ));
        assert!(matches!(
            build_features(&p, 40),
            Err(DataError::OutOfRange { .. })
        ));
    }

    #[test]
    fn zero_and_constant_features() {
        let zero = constant_panel(35, &[0.0, 0.0]);
        assert!(build_features(&zero, 31)
            .unwrap()
            .values
            .iter()
            .all(|v| *v == 0.0));

        let r = [0.003, -0.002];
        let p = constant_panel(35, &r);
        let f = build_features(&p, 33).unwrap().values;
        for (j, rj) in r.iter().enumerate() {
            let b = j * FEATURES_PER_ASSET;
            for k in 0..8 {
                assert!((f[b + k] - rj).abs() < 1e-15, "entry {k}");
            }
            for k in 8..11 {
                assert!(f[b + k].abs() < 1e-15);
            }
        }
    }

    #[test]
    fn feature_layout_matches_hand_computation() {
        let rows: Vec<Vec<f64>> = (0..31).map(|s| vec![s as f64 * 0.001]).collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let p = panel_from(&refs);
        let f = build_features(&p, 30).unwrap().values;
        assert!((f[0] - 0.029).abs() < 1e-15);
        assert!((f[4] - 0.025).abs() < 1e-15);
        // mean of 20..29 and 0..29
        assert!((f[5] - 0.0245).abs() < 1e-12);
        assert!((f[7] - 0.0145).abs() < 1e-12);
        // sd of 10 consecutive steps of 0.001: 0.001*sqrt(110/12)
        assert!((f[8] - 0.001 * (110.0f64 / 12.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn simulation_zero_cov_and_determinism() {
        let spec = SimSpec {
            mean: DVector::zeros(3),
            cov: DMatrix::zeros(3, 3),
            horizon: 20,
            seed: 9,
            tickers: None,
        };
        let p = simulate_returns(&spec).unwrap();
        assert!(p.returns().iter().all(|v| *v == 0.0));

        let a = simulate_returns(&etf7_sim_spec(325, 42)).unwrap();
        let b = simulate_returns(&etf7_sim_spec(325, 42)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 325);
        let c = simulate_returns(&etf7_sim_spec(325, 43)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn simulation_rejects_bad_covariance() {
        let mut spec = etf7_sim_spec(10, 1);
        spec.cov[(0, 1)] = -spec.cov[(0, 1)] - 1.0;
        assert!(simulate_returns(&spec).is_err());
        let spec = SimSpec {
            mean: DVector::zeros(2),
            cov: DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]),
            horizon: 5,
            seed: 0,
            tickers: None,
        };
        assert!(matches!(
            simulate_returns(&spec),
            Err(DataError::InvalidSpec(_))
        ));
        let mut spec = etf7_sim_spec(10, 1);
        spec.horizon = 0;
        assert!(simulate_returns(&spec).is_err());
    }

    #[test]
    fn etf7_covariance_is_positive_definite() {
        let cov = etf7_covariance();
        assert!(cov.clone().cholesky().is_some());
        assert!((cov[(0, 0)].sqrt() * 252f64.sqrt() - 0.1759).abs() < 1e-12);
    }

    #[test]
    fn simulation_moments_converge() {
        let spec = etf7_sim_spec(100_000, 5);
        let p = simulate_returns(&spec).unwrap();
        let t = p.len() as f64;
        let r = p.returns();
        for i in 0..7 {
            let col = r.column(i);
            let mean = col.mean();
            let var_i = spec.cov[(i, i)];
            assert!(
                (mean - spec.mean[i]).abs() < 3.0 * (var_i / t).sqrt(),
                "mean {i}"
            );
            for j in 0..=i {
                let mj = r.column(j).mean();
                let cov = col
                    .iter()
                    .zip(r.column(j).iter())
                    .map(|(a, b)| (a - mean) * (b - mj))
                    .sum::<f64>()
                    / (t - 1.0);
                // se of a sample covariance for Gaussian data: sqrt((s_ii s_jj + s_ij^2)/T)
                let se =
                    ((spec.cov[(i, i)] * spec.cov[(j, j)] + spec.cov[(i, j)].powi(2)) / t).sqrt();
                assert!((cov - spec.cov[(i, j)]).abs() < 3.0 * se, "cov {i},{j}");
            }
        }
    }

    #[test]
    fn random_asset_column() {
        let base = simulate_returns(&etf7_sim_spec(200, 1)).unwrap();
        let p = append_random_asset(&base, -0.0005, 0.0005, 7, "RAND").unwrap();
        assert_eq!(p.n_assets(), 8);
        assert_eq!(p.tickers()[7], "RAND");
        assert_eq!(p.returns().columns(0, 7), base.returns().columns(0, 7));
        let q = append_random_asset(&base, -0.0005, 0.0005, 7, "RAND").unwrap();
        assert_eq!(p, q);

        let flat = append_random_asset(&base, 0.002, 0.0, 7, "C").unwrap();
        assert!(flat.returns().column(7).iter().all(|v| *v == 0.002));
        assert!(append_random_asset(&base, 0.0, -1.0, 7, "C").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn features_ignore_future_returns(t in 30usize..59, day_off in 0usize..30, asset in 0usize..7, v in -0.5f64..0.5) {
            let p = simulate_returns(&etf7_sim_spec(60, 11)).unwrap();
            let before = build_features(&p, t).unwrap();
            let mut q = p.clone();
            let day = (t + day_off).min(59);
            q.set(day, asset, v).unwrap();
            prop_assert_eq!(before, build_features(&q, t).unwrap());
        }
    }
}
