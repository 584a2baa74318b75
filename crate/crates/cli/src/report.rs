//! Mean and spread of the relative errors per noise level.

use std::fmt::Write as _;
use std::path::Path;

use crate::pipeline::SummaryRow;
use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Sample mean and standard deviation; `None` for an empty sample. A
    /// single value has zero spread.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(Self { mean, std })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelStats {
    pub noise_pct: f64,
    pub runs: usize,
    pub sto: Option<Stat>,
    pub mf: Stat,
    pub d: Option<Stat>,
}

impl LevelStats {
    /// The estimator did not beat the baseline on average.
    pub fn mf_worse_than_sto(&self) -> bool {
        self.sto.as_ref().is_some_and(|s| self.mf.mean >= s.mean)
    }
}

/// Reads `summary.csv` from `dir`.
pub fn read_summary(dir: &Path) -> Result<Vec<SummaryRow>, CliError> {
    let path = dir.join("summary.csv");
    if !path.is_file() {
        return Err(CliError::MissingInput(format!(
            "{} not found",
            path.display()
        )));
    }
    let mut rdr = csv::Reader::from_path(&path)?;
    let rows = rdr
        .deserialize()
        .collect::<Result<Vec<SummaryRow>, _>>()
        .map_err(|e| CliError::MissingInput(format!("{}: {e}", path.display())))?;
    if rows.is_empty() {
        return Err(CliError::MissingInput(format!(
            "{} has no rows",
            path.display()
        )));
    }
    Ok(rows)
}

/// Groups rows by noise level, keeping the order in which levels first appear.
pub fn level_stats(rows: &[SummaryRow]) -> Vec<LevelStats> {
    let mut levels: Vec<f64> = Vec::new();
    for r in rows {
        if !levels.contains(&r.noise_pct) {
            levels.push(r.noise_pct);
        }
    }
    levels
        .into_iter()
        .map(|level| {
            let group: Vec<&SummaryRow> = rows.iter().filter(|r| r.noise_pct == level).collect();
            let sto: Vec<f64> = group.iter().filter_map(|r| r.err_sto_pct).collect();
            let mf: Vec<f64> = group.iter().map(|r| r.err_mf_pct).collect();
            let d: Vec<f64> = group.iter().filter_map(|r| r.err_d_pct).collect();
            LevelStats {
                noise_pct: level,
                runs: group.len(),
                sto: Stat::of(&sto),
                mf: Stat::of(&mf).expect("group is nonempty"),
                d: Stat::of(&d),
            }
        })
        .collect()
}

fn cell(s: &Option<Stat>) -> String {
    match s {
        Some(s) => format!("{:.3} ± {:.3}", s.mean, s.std),
        None => "-".into(),
    }
}

/// Plain-text table of relative L2 errors (percent).
pub fn render_report(rows: &[SummaryRow]) -> String {
    let stats = level_stats(rows);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>9}  {:>4}  {:>18}  {:>18}  {:>18}  flag",
        "noise_pct", "runs", "STO x2 err %", "MF x2 err %", "MF d err %"
    );
    for s in &stats {
        let _ = writeln!(
            out,
            "{:>9}  {:>4}  {:>18}  {:>18}  {:>18}  {}",
            s.noise_pct,
            s.runs,
            cell(&s.sto),
            cell(&Some(s.mf.clone())),
            cell(&s.d),
            if s.mf_worse_than_sto() { "MF>=STO" } else { "" }
        );
    }
    out
}
