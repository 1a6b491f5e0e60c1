//! The work behind each subcommand, callable without the argument parser.

use std::path::Path;

use advloss_core::landscape::{default_y_range, dominance_defect, export_landscape, gamma_grid, refinement_defect, SearchConfig};
use advloss_core::{classify, epsilon_weighted, get_loss, ValidityConfig, ValidityReport};
use advloss_dantest::{train_with, DanConfig, Dataset, RunRecord};
use serde::Serialize;

use crate::config::{create_dir, write_json};
use crate::report::{curves, pivot, report_table};
use crate::sweep::{read_aggregates, stored_runs, write_run, CellKey, Regularizer, AGGREGATE_FILE, RUNS_DIR};
use crate::CliError;

/// Checks on one exported landscape.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LandscapeSummary {
    pub loss: String,
    /// Largest `|ψ(γ) − ψ(1 − γ)|`.
    pub symmetry_defect: f64,
    /// Largest drop of `ψ` when the inner search grid is refined.
    pub refinement_defect: f64,
    /// Largest excess of an exported `Ψ(γ, y)` sample over `ψ(γ)`.
    pub dominance_defect: f64,
    pub psi_half: f64,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n.max(2) - 1) as f64).collect()
}

/// Writes `<loss>_grid.csv` and `<loss>_psi.csv` for each loss into `out`,
/// plus `landscape_summary.csv`.
pub fn landscape(out: &Path, losses: &[String], gamma_intervals: usize, y_points: usize) -> Result<Vec<LandscapeSummary>, CliError> {
    create_dir(out)?;
    let search = SearchConfig::default();
    let gammas = gamma_grid(gamma_intervals);
    let mut summaries = Vec::new();
    for name in losses {
        let loss = get_loss(name)?;
        let (lo, hi) = default_y_range(name);
        let ys = linspace(lo, hi, y_points);
        let prof = export_landscape(&loss, &gammas, &ys, &search, &out.join(format!("{name}_grid.csv")), &out.join(format!("{name}_psi.csv")))?;
        summaries.push(LandscapeSummary {
            loss: name.clone(),
            symmetry_defect: prof.symmetry_defect(),
            refinement_defect: refinement_defect(&loss, &gammas, &search)?,
            dominance_defect: dominance_defect(&loss, &prof, &ys),
            psi_half: prof.half_index().map_or(f64::NAN, |i| prof.psi[i]),
        });
    }
    let path = out.join("landscape_summary.csv");
    let mut w = csv::Writer::from_path(&path)?;
    for s in &summaries {
        w.serialize(s)?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    Ok(summaries)
}

/// Validity reports for every `(loss, ε)` pair. Losses without pointwise
/// components cannot be checked and yield an error entry.
pub fn validity(losses: &[String], epsilons: &[f64]) -> Vec<(String, f64, Result<ValidityReport, CliError>)> {
    let cfg = ValidityConfig::default();
    let mut out = Vec::new();
    for name in losses {
        for &eps in epsilons {
            let report = get_loss(name)
                .and_then(|l| if eps == 1.0 { Ok(l) } else { epsilon_weighted(&l, eps) })
                .and_then(|l| classify(&l, &cfg))
                .map_err(CliError::from);
            out.push((name.clone(), eps, report));
        }
    }
    out
}

/// One training run; the series and summary land in `out` as
/// `<hash>.csv` and `<hash>.json`.
pub fn train_run(
    config: &DanConfig,
    standard: &Dataset,
    test: &Dataset,
    out: &Path,
    observe: impl FnMut(&advloss_dantest::trainer::Progress),
) -> Result<RunRecord, CliError> {
    create_dir(out)?;
    let data = config.training_set(standard)?;
    let record = train_with(config, &data, test, observe)?;
    let reg = Regularizer { kind: config.penalty.kind, side: config.penalty.side, spectral_norm: config.spectral_norm };
    write_run(out, &CellKey::of(&config.loss, &reg, config), config, &record)?;
    Ok(record)
}

/// Builds `report.csv` and `curves.csv` in a sweep directory and returns
/// the table text.
pub fn report(out: &Path, rows: &str, cols: &str) -> Result<String, CliError> {
    let aggs = read_aggregates(&out.join(AGGREGATE_FILE))?;
    let bad_axis = || CliError::Sweep(format!("axes must be among {:?}", CellKey::AXES));
    let (cells, row_labels, col_labels) = pivot(&aggs, rows, cols).ok_or_else(bad_axis)?;
    let table = report_table(&cells, &row_labels, &col_labels);
    let path = out.join("report.csv");
    std::fs::write(&path, &table).map_err(|e| CliError::io(&path, e))?;
    let runs = stored_runs(&out.join(RUNS_DIR))?;
    let path = out.join("curves.csv");
    std::fs::write(&path, curves(&runs)).map_err(|e| CliError::io(&path, e))?;
    Ok(table)
}

/// Writes the validity reports that succeeded to `validity.json`.
pub fn write_validity(out: &Path, results: &[(String, f64, Result<ValidityReport, CliError>)]) -> Result<(), CliError> {
    create_dir(out)?;
    let ok: Vec<&ValidityReport> = results.iter().filter_map(|r| r.2.as_ref().ok()).collect();
    write_json(&out.join("validity.json"), &ok)
}
