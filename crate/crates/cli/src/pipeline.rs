//! simulate -> noise -> estimate -> compare, one job per (noise level, replicate).

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use modfun_core::estimator::{Estimates, EstimatorError};
use modfun_core::signals::{add_noise, relative_l2_error, write_csv_columns, TimeGrid};
use modfun_core::systems::{simulate, sto_estimate, Trajectory};
use modfun_core::{Estimator, NoiseSpec, SampledSignal, StoConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::CliError;

/// One line of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub noise_pct: f64,
    pub seed: u64,
    pub err_sto_pct: Option<f64>,
    pub err_mf_pct: f64,
    pub err_d_pct: Option<f64>,
}

struct Analysis {
    est: Estimates,
    sto: Option<SampledSignal>,
}

#[derive(Debug, Clone)]
pub struct ReplicateResult {
    pub row: SummaryRow,
    pub signals_file: PathBuf,
}

/// Seed of replicate `replicate` at the `level_index`-th noise level.
///
/// The pair is packed into one word, offset from the master seed by the
/// golden-ratio increment and passed through the splitmix64 finalizer, so
/// neighbouring jobs get decorrelated streams and the mapping never depends
/// on scheduling.
pub fn replicate_seed(master: u64, level_index: usize, replicate: usize) -> u64 {
    let job = ((level_index as u64) << 32) | replicate as u64;
    let mut z = master.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(job.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn estimator_error(e: EstimatorError) -> CliError {
    match e {
        EstimatorError::NonFiniteWindow { window, .. } => CliError::Numerical {
            module: "estimator",
            window: Some(window),
            message: e.to_string(),
        },
        EstimatorError::Config(_)
        | EstimatorError::WindowTooLong { .. }
        | EstimatorError::OrderUnavailable { .. }
        | EstimatorError::NotConfigured { .. }
        | EstimatorError::Basis(_) => CliError::Config(format!("estimator: {e}")),
        other => CliError::Numerical {
            module: "estimator",
            window: None,
            message: other.to_string(),
        },
    }
}

fn level_label(level: f64) -> String {
    format!("{level}").replace('.', "p")
}

/// Samples of `truth` at the points of `sub`, which lie on `truth`'s grid.
fn on_grid(truth: &SampledSignal, sub: &TimeGrid) -> SampledSignal {
    let g = truth.grid();
    let values = sub
        .times()
        .map(|t| {
            truth.values()[g
                .index_of(t)
                .expect("evaluation grid lies on the sampling grid")]
        })
        .collect();
    SampledSignal::new(*sub, values).expect("same length")
}

fn relative_error(truth: &SampledSignal, est: &SampledSignal, trim: f64) -> Result<f64, CliError> {
    let eg = *est.grid();
    let x = on_grid(truth, &eg);
    let cut = (trim * (eg.len() - 1) as f64).round() as usize;
    let (a, b) = (eg.time(cut), eg.time(eg.len() - 1 - cut));
    relative_l2_error(&x, est, a, b).map_err(|e| CliError::Numerical {
        module: "signals",
        window: None,
        message: e.to_string(),
    })
}

/// `values` placed on `grid`, empty where `est` has no sample.
fn spread(grid: &TimeGrid, est: &SampledSignal) -> Vec<Option<f64>> {
    let mut out = vec![None; grid.len()];
    for (t, v) in est.grid().times().zip(est.values()) {
        if let Some(i) = grid.index_of(t) {
            out[i] = Some(*v);
        }
    }
    out
}

fn write_signals(
    path: &Path,
    grid: &TimeGrid,
    y: &SampledSignal,
    truth: &Trajectory,
    est: &Estimates,
    sto: Option<&SampledSignal>,
) -> Result<(), CliError> {
    let full = |s: &SampledSignal| s.values().iter().copied().map(Some).collect::<Vec<_>>();
    let mut cols: Vec<(String, Vec<Option<f64>>)> = vec![("y_noisy".into(), full(y))];
    for (k, x) in truth.states.iter().enumerate() {
        cols.push((format!("x{}", k + 1), full(x)));
    }
    for s in &est.states {
        cols.push((format!("{}_hat", s.target), spread(grid, &s.signal)));
    }
    cols.push(("d".into(), full(&truth.disturbance)));
    if let Some(d) = &est.disturbance {
        cols.push(("d_hat".into(), spread(grid, &d.signal)));
    }
    if let Some(x2) = sto {
        cols.push(("x2_sto".into(), full(x2)));
    }
    let named: Vec<(&str, Vec<Option<f64>>)> =
        cols.iter().map(|(n, v)| (n.as_str(), v.clone())).collect();
    let file = BufWriter::new(File::create(path)?);
    write_csv_columns(file, grid, &named).map_err(|e| CliError::Io(e.to_string()))
}

/// Runs every (level, replicate) job in parallel, writes one signals CSV per
/// job plus `summary.csv` and the resolved `config.json` into `out_dir`, and
/// returns the results in (level, replicate) order.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out_dir: &Path,
) -> Result<Vec<ReplicateResult>, CliError> {
    cfg.validate()?;
    let grid = cfg.time_grid()?;
    let sys = cfg.build_system()?;
    let u = SampledSignal::zeros(grid);
    let truth = simulate(&sys, &u, &grid).map_err(|e| CliError::Numerical {
        module: "systems",
        window: None,
        message: e.to_string(),
    })?;
    let estimator = Estimator::new(&sys, &cfg.estimator, &grid).map_err(estimator_error)?;
    fs::create_dir_all(out_dir)?;

    let jobs: Vec<(usize, f64, usize)> = cfg
        .noise
        .effective_levels()
        .into_iter()
        .enumerate()
        .flat_map(|(li, level)| (0..cfg.noise.replicates).map(move |r| (li, level, r)))
        .collect();
    let trim = cfg.metrics.trim_fraction;
    let analyse = |y: &SampledSignal| -> Result<Analysis, CliError> {
        let est = estimator.run(y, &u).map_err(estimator_error)?;
        let sto = match (cfg.baselines.sto, cfg.pendulum_params()) {
            (Some(spec), Some(params)) => Some(
                sto_estimate(y, StoConfig { fplus: spec.fplus }, params)
                    .map_err(|e| CliError::Numerical {
                        module: "systems",
                        window: None,
                        message: format!("super-twisting observer: {e}"),
                    })?
                    .x2,
            ),
            _ => None,
        };
        Ok(Analysis { est, sto })
    };
    // Every noiseless replicate measures the same output.
    let clean = if jobs.iter().any(|j| j.1 == 0.0) {
        Some(analyse(truth.output())?)
    } else {
        None
    };

    let results: Result<Vec<ReplicateResult>, CliError> = jobs
        .par_iter()
        .map(|&(li, level, rep)| {
            let seed = replicate_seed(cfg.noise.master_seed, li, rep);
            let y = add_noise(
                truth.output(),
                NoiseSpec {
                    level_percent: level,
                    seed,
                },
            );
            let noisy;
            let Analysis { est, sto } = match &clean {
                Some(c) if level == 0.0 => c,
                _ => {
                    noisy = analyse(&y)?;
                    &noisy
                }
            };
            let err_mf_pct = relative_error(&truth.states[1], &est.states[0].signal, 0.0)?;
            let err_d_pct = match &est.disturbance {
                Some(d) => Some(relative_error(&truth.disturbance, &d.signal, trim)?),
                None => None,
            };
            let err_sto_pct = match sto {
                Some(x2) => Some(relative_error(&truth.states[1], x2, 0.0)?),
                None => None,
            };
            let signals_file = out_dir.join(format!(
                "signals_noise{}_rep{rep:02}.csv",
                level_label(level)
            ));
            write_signals(&signals_file, &grid, &y, &truth, est, sto.as_ref())?;
            Ok(ReplicateResult {
                row: SummaryRow {
                    noise_pct: level,
                    seed,
                    err_sto_pct,
                    err_mf_pct,
                    err_d_pct,
                },
                signals_file,
            })
        })
        .collect();
    let results = results?;

    let mut w = csv::Writer::from_path(out_dir.join("summary.csv"))?;
    for r in &results {
        w.serialize(&r.row)?;
    }
    w.flush()?;
    fs::write(out_dir.join("config.json"), cfg.to_json() + "\n")?;
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_differ_across_jobs() {
        let mut seen = std::collections::HashSet::new();
        for li in 0..5 {
            for r in 0..20 {
                assert!(seen.insert(replicate_seed(7, li, r)));
            }
        }
        assert_eq!(replicate_seed(7, 2, 3), replicate_seed(7, 2, 3));
        assert_ne!(replicate_seed(7, 2, 3), replicate_seed(8, 2, 3));
    }

    #[test]
    fn level_labels_are_file_safe() {
        assert_eq!(level_label(0.0), "0");
        assert_eq!(level_label(2.5), "2p5");
    }
}
