//! Report files. JSON numbers carry 10 significant digits; CSV numbers are
//! written in shortest round-trip form so they parse back exactly.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use nalgebra::DVector;
use serde_json::Value;

use crate::CliError;

/// Significant digits kept for numbers in `report.json`.
pub const REPORT_DIGITS: usize = 10;

pub fn round_sig(x: f64, digits: usize) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", digits.saturating_sub(1), x)
        .parse()
        .unwrap_or(x)
}

/// Rounds every float in `value` to [`REPORT_DIGITS`] significant digits.
pub fn round_json(value: Value) -> Value {
    match value {
        Value::Number(n) if n.is_f64() => n
            .as_f64()
            .and_then(|x| serde_json::Number::from_f64(round_sig(x, REPORT_DIGITS)))
            .map_or(Value::Null, Value::Number),
        Value::Array(items) => Value::Array(items.into_iter().map(round_json).collect()),
        Value::Object(map) => {
            Value::Object(map.into_iter().map(|(k, v)| (k, round_json(v))).collect())
        }
        other => other,
    }
}

pub fn to_report_json(value: Value) -> String {
    let mut s = serde_json::to_string_pretty(&round_json(value)).expect("JSON values serialize");
    s.push('\n');
    s
}

fn csv_string(write: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    write(&mut w).expect("writing CSV to memory");
    String::from_utf8(w.into_inner().expect("flushing CSV to memory")).expect("CSV is UTF-8")
}

/// `date,<strategy>...` with one wealth column per strategy.
pub fn wealth_csv(dates: &[NaiveDate], names: &[String], wealth: &[&[f64]]) -> String {
    csv_string(|w| {
        let mut header = vec!["date".to_owned()];
        header.extend(names.iter().cloned());
        w.write_record(&header)?;
        for (t, d) in dates.iter().enumerate() {
            let mut row = vec![d.to_string()];
            row.extend(wealth.iter().map(|s| s[t].to_string()));
            w.write_record(&row)?;
        }
        Ok(())
    })
}

/// One strategy's allocation rows: name, dates and weights.
pub type AllocationRows<'a> = (String, &'a [NaiveDate], &'a [DVector<f64>]);

/// Dates, strategy names and one wealth column per strategy.
pub type WealthColumns = (Vec<NaiveDate>, Vec<String>, Vec<Vec<f64>>);

/// Long format: `date,strategy,<ticker>...`.
pub fn allocations_csv(tickers: &[String], rows: &[AllocationRows<'_>]) -> String {
    csv_string(|w| {
        let mut header = vec!["date".to_owned(), "strategy".to_owned()];
        header.extend(tickers.iter().cloned());
        w.write_record(&header)?;
        for (name, dates, allocs) in rows {
            for (d, a) in dates.iter().zip(allocs.iter()) {
                let mut row = vec![d.to_string(), name.clone()];
                row.extend(a.iter().map(|v| v.to_string()));
                w.write_record(&row)?;
            }
        }
        Ok(())
    })
}

/// One row per retraining of a gated strategy: `date,strategy,<ticker>...`
/// with 1 for an open gate and 0 for a closed one.
pub fn gates_csv(tickers: &[String], rows: &[(String, NaiveDate, DVector<f64>)]) -> String {
    csv_string(|w| {
        let mut header = vec!["date".to_owned(), "strategy".to_owned()];
        header.extend(tickers.iter().cloned());
        w.write_record(&header)?;
        for (name, d, g) in rows {
            let mut row = vec![d.to_string(), name.clone()];
            row.extend(g.iter().map(|v| format!("{}", *v as u8)));
            w.write_record(&row)?;
        }
        Ok(())
    })
}

/// Parses a wealth CSV back into dates, strategy names and columns.
pub fn read_wealth_csv(text: &str) -> Result<WealthColumns, CliError> {
    let bad = |e: &dyn std::fmt::Display| CliError::Runtime(format!("wealth CSV: {e}"));
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let names: Vec<String> = r
        .headers()
        .map_err(|e| bad(&e))?
        .iter()
        .skip(1)
        .map(String::from)
        .collect();
    let mut dates = Vec::new();
    let mut cols = vec![Vec::new(); names.len()];
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(&e))?;
        dates.push(rec[0].parse().map_err(|e| bad(&e))?);
        for (k, col) in cols.iter_mut().enumerate() {
            col.push(rec[k + 1].parse().map_err(|e| bad(&e))?);
        }
    }
    Ok((dates, names, cols))
}

/// Files written into an output directory. Unless [`OutputDir::commit`] is
/// called, dropping the guard deletes them, and the directory too when the
/// guard created it.
pub struct OutputDir {
    dir: PathBuf,
    created_dir: bool,
    written: Vec<PathBuf>,
    committed: bool,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        let created_dir = !dir.exists();
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            created_dir,
            written: Vec::new(),
            committed: false,
        })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        fs::write(&path, contents)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn commit(mut self) -> Vec<PathBuf> {
        self.committed = true;
        std::mem::take(&mut self.written)
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for p in &self.written {
            let _ = fs::remove_file(p);
        }
        if self.created_dir {
            let _ = fs::remove_dir(&self.dir);
        }
    }
}
