//! Grids of training runs: cell expansion, resumable execution and
//! per-cell aggregation.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use advloss_dantest::trainer::{EvalPoint, FaultInfo};
use advloss_dantest::{train, DanConfig, Dataset, PenaltyKind, RunRecord, Side, Variant};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{create_dir, write_json};
use crate::CliError;

/// A penalty kind and side, with or without spectral normalisation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Regularizer {
    pub kind: PenaltyKind,
    pub side: Side,
    pub spectral_norm: bool,
}

impl Regularizer {
    /// The fourteen settings of the full comparison grid.
    pub const GRID: [&'static str; 14] =
        ["none", "tcgp", "tlgp", "ocgp", "olgp", "r1", "r2", "sn", "sn+tcgp", "sn+tlgp", "sn+ocgp", "sn+olgp", "sn+r1", "sn+r2"];

    pub fn penalty(kind: PenaltyKind, side: Side) -> Self {
        Self { kind, side, spectral_norm: false }
    }

    pub fn with_sn(self) -> Self {
        Self { spectral_norm: true, ..self }
    }

    /// Sets the penalty kind, side and normalisation of `config`, keeping
    /// its `λ`, `k` and `c`.
    pub fn apply(&self, config: &mut DanConfig) {
        config.penalty.kind = self.kind;
        config.penalty.side = self.side;
        config.spectral_norm = self.spectral_norm;
    }
}

impl fmt::Display for Regularizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let penalty = advloss_dantest::PenaltySpec::of(self.kind, self.side).short_name();
        match (self.spectral_norm, self.kind) {
            (true, PenaltyKind::None) => f.write_str("sn"),
            (true, _) => write!(f, "sn+{penalty}"),
            (false, _) => f.write_str(penalty),
        }
    }
}

impl FromStr for Regularizer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let lower = s.trim().to_ascii_lowercase();
        let (sn, rest) = match lower.strip_prefix("sn") {
            Some(r) => (true, r.trim_start_matches(['+', ' '])),
            None => (false, lower.as_str()),
        };
        let (kind, side) = match rest {
            "" | "none" | "unregularized" => (PenaltyKind::None, Side::TwoSide),
            "tcgp" => (PenaltyKind::Coupled, Side::TwoSide),
            "ocgp" => (PenaltyKind::Coupled, Side::OneSide),
            "tlgp" => (PenaltyKind::Local, Side::TwoSide),
            "olgp" => (PenaltyKind::Local, Side::OneSide),
            "r1" => (PenaltyKind::R1, Side::TwoSide),
            "r2" => (PenaltyKind::R2, Side::TwoSide),
            _ => return Err(format!("unknown regularizer {s:?}")),
        };
        if !sn && rest.is_empty() {
            return Err(format!("unknown regularizer {s:?}"));
        }
        Ok(Self { kind, side, spectral_norm: sn })
    }
}

impl TryFrom<String> for Regularizer {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<Regularizer> for String {
    fn from(r: Regularizer) -> String {
        r.to_string()
    }
}

/// Labels of one grid cell, one per axis.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub loss: String,
    pub regularizer: String,
    pub dataset: String,
    pub epsilon: String,
    pub k: String,
    pub lambda: String,
    pub beta1_g: String,
    pub beta1_d: String,
}

impl CellKey {
    pub const AXES: [&'static str; 8] = ["loss", "regularizer", "dataset", "epsilon", "k", "lambda", "beta1_g", "beta1_d"];

    pub fn of(loss_label: &str, reg: &Regularizer, c: &DanConfig) -> Self {
        Self {
            loss: loss_label.to_string(),
            regularizer: reg.to_string(),
            dataset: variant_name(c.dataset).to_string(),
            epsilon: c.epsilon.to_string(),
            k: c.penalty.k.to_string(),
            lambda: c.penalty.lambda.to_string(),
            beta1_g: c.optimizer.beta1_g.to_string(),
            beta1_d: c.optimizer.beta1_d.to_string(),
        }
    }

    pub fn values(&self) -> [&str; 8] {
        [&self.loss, &self.regularizer, &self.dataset, &self.epsilon, &self.k, &self.lambda, &self.beta1_g, &self.beta1_d]
    }

    pub fn axis(&self, name: &str) -> Option<&str> {
        Self::AXES.iter().position(|&a| a == name).map(|i| self.values()[i])
    }

    fn from_values(v: &[String]) -> Self {
        Self {
            loss: v[0].clone(),
            regularizer: v[1].clone(),
            dataset: v[2].clone(),
            epsilon: v[3].clone(),
            k: v[4].clone(),
            lambda: v[5].clone(),
            beta1_g: v[6].clone(),
            beta1_d: v[7].clone(),
        }
    }
}

pub fn variant_name(v: Variant) -> &'static str {
    match v {
        Variant::Standard => "standard",
        Variant::Imbalanced => "imbalanced",
        Variant::VeryImbalanced => "very_imbalanced",
    }
}

/// A grid of configurations around `base`. An empty axis keeps the base
/// value. Run `r` of a cell uses seed `base.seed + r`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    pub base: DanConfig,
    pub losses: Vec<String>,
    pub regularizers: Vec<Regularizer>,
    pub datasets: Vec<Variant>,
    pub epsilons: Vec<f64>,
    pub ks: Vec<f64>,
    pub lambdas: Vec<f64>,
    /// `[beta1_g, beta1_d]` pairs.
    pub beta1s: Vec<[f64; 2]>,
    pub runs_per_cell: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            base: DanConfig::default(),
            losses: Vec::new(),
            regularizers: Vec::new(),
            datasets: Vec::new(),
            epsilons: Vec::new(),
            ks: Vec::new(),
            lambdas: Vec::new(),
            beta1s: Vec::new(),
            runs_per_cell: 1,
        }
    }
}

/// One grid point; `config.seed` is the seed of its first run.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub key: CellKey,
    pub config: DanConfig,
}

impl Cell {
    pub fn run_config(&self, run: usize) -> DanConfig {
        DanConfig { seed: self.config.seed.wrapping_add(run as u64), ..self.config.clone() }
    }
}

fn or_base<T: Clone>(axis: &[T], base: T) -> Vec<T> {
    if axis.is_empty() {
        vec![base]
    } else {
        axis.to_vec()
    }
}

impl SweepSpec {
    pub fn cells(&self) -> Vec<Cell> {
        let b = &self.base;
        let base_reg = Regularizer { kind: b.penalty.kind, side: b.penalty.side, spectral_norm: b.spectral_norm };
        let mut out = Vec::new();
        for loss in or_base(&self.losses, b.loss.clone()) {
            for reg in or_base(&self.regularizers, base_reg) {
                for &dataset in &or_base(&self.datasets, b.dataset) {
                    for &epsilon in &or_base(&self.epsilons, b.epsilon) {
                        for &k in &or_base(&self.ks, b.penalty.k) {
                            for &lambda in &or_base(&self.lambdas, b.penalty.lambda) {
                                for &[bg, bd] in &or_base(&self.beta1s, [b.optimizer.beta1_g, b.optimizer.beta1_d]) {
                                    let mut c = b.clone();
                                    c.loss = loss.clone();
                                    reg.apply(&mut c);
                                    c.dataset = dataset;
                                    c.epsilon = epsilon;
                                    c.penalty.k = k;
                                    c.penalty.lambda = lambda;
                                    c.optimizer.beta1_g = bg;
                                    c.optimizer.beta1_d = bd;
                                    out.push(Cell { key: CellKey::of(&loss_label(&c), &reg, &c), config: c });
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Every cell must resolve to a valid config with at least one step.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.runs_per_cell == 0 {
            return Err(CliError::Sweep("runs_per_cell must be positive".into()));
        }
        for cell in self.cells() {
            let fail = |e: String| CliError::Sweep(format!("cell {:?}: {e}", cell.key.values()));
            if cell.config.steps == 0 {
                return Err(fail("steps must be positive".into()));
            }
            cell.config.validate().map_err(|e| fail(e.to_string()))?;
            cell.config.resolve_loss().map_err(|e| fail(e.to_string()))?;
        }
        Ok(())
    }
}

/// The loss name, with the generator override appended when set.
fn loss_label(c: &DanConfig) -> String {
    match c.generator {
        Some(g) => format!("{}/{}", c.loss, serde_json::to_value(g).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()),
        None => c.loss.clone(),
    }
}

/// JSON side of a stored run; the series lives in the CSV next to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub cell: CellKey,
    pub config: DanConfig,
    pub config_hash: String,
    pub final_error: f64,
    pub wall_time_secs: f64,
    pub fault: Option<FaultInfo>,
}

pub fn run_paths(dir: &Path, hash: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{hash}.csv")), dir.join(format!("{hash}.json")))
}

/// Writes `step,error` to `<hash>.csv` and the summary to `<hash>.json`.
pub fn write_run(dir: &Path, cell: &CellKey, config: &DanConfig, record: &RunRecord) -> Result<(), CliError> {
    let (csv_path, json_path) = run_paths(dir, &record.config_hash);
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(["step", "error"])?;
    for p in &record.series {
        w.write_record([p.step.to_string(), p.error.to_string()])?;
    }
    w.flush().map_err(|e| CliError::io(&csv_path, e))?;
    let summary = RunSummary {
        cell: cell.clone(),
        config: config.clone(),
        config_hash: record.config_hash.clone(),
        final_error: record.final_error,
        wall_time_secs: record.wall_time_secs,
        fault: record.fault.clone(),
    };
    // The summary goes last: its presence marks the run complete.
    write_json(&json_path, &summary)
}

pub fn read_summary(path: &Path) -> Option<RunSummary> {
    serde_json::from_str(&std::fs::read_to_string(path).ok()?).ok()
}

pub fn read_series(path: &Path) -> Result<Vec<EvalPoint>, CliError> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(CliError::from)).collect()
}

/// Reads a stored run back into a record.
pub fn read_run(dir: &Path, hash: &str) -> Result<(RunSummary, RunRecord), CliError> {
    let (csv_path, json_path) = run_paths(dir, hash);
    let summary = read_summary(&json_path).ok_or_else(|| CliError::Parse { path: json_path.display().to_string(), detail: "unreadable run summary".into() })?;
    let record = RunRecord {
        series: read_series(&csv_path)?,
        final_error: summary.final_error,
        wall_time_secs: summary.wall_time_secs,
        config_hash: summary.config_hash.clone(),
        fault: summary.fault.clone(),
    };
    Ok((summary, record))
}

/// What happened to one run of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub enum RunStatus {
    Trained { final_error: f64, fault: bool },
    /// Found complete in the output directory.
    Reused { final_error: f64, fault: bool },
    Failed(String),
}

impl RunStatus {
    fn outcome(&self) -> Option<(f64, bool)> {
        match *self {
            RunStatus::Trained { final_error, fault } | RunStatus::Reused { final_error, fault } => Some((final_error, fault)),
            RunStatus::Failed(_) => None,
        }
    }
}

/// Mean and sample standard deviation of a cell's final errors.
#[derive(Clone, Debug, PartialEq)]
pub struct CellAggregate {
    pub key: CellKey,
    /// Completed runs; `mean` and `std` are over these.
    pub runs: usize,
    /// Runs that raised an error instead of completing.
    pub failed: usize,
    /// Completed runs that stopped on a non-finite value.
    pub faults: usize,
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample (`n - 1`) standard deviation; `std` is 0 for one value
/// and both are NaN for none.
pub fn aggregate(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const RUNS_DIR: &str = "runs";

/// Runs every (cell, seed) not already stored under `out/runs`, on a pool
/// of `jobs` threads (one cell per task, its seeds in sequence), then writes
/// `out/aggregate.csv`. Runs that fail are reported to `on_run` and counted,
/// and the sweep carries on.
pub fn run_sweep(
    spec: &SweepSpec,
    standard: &Dataset,
    test: &Dataset,
    out: &Path,
    jobs: usize,
    on_run: &(dyn Fn(&CellKey, u64, &RunStatus) + Sync),
) -> Result<Vec<CellAggregate>, CliError> {
    spec.validate()?;
    let runs_dir = out.join(RUNS_DIR);
    create_dir(&runs_dir)?;
    write_json(&out.join("sweep.json"), spec)?;
    let cells = spec.cells();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().map_err(|e| CliError::Sweep(e.to_string()))?;
    let statuses: Vec<Vec<RunStatus>> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                (0..spec.runs_per_cell)
                    .map(|r| {
                        let config = cell.run_config(r);
                        let status = run_one(cell, &config, standard, test, &runs_dir);
                        on_run(&cell.key, config.seed, &status);
                        status
                    })
                    .collect()
            })
            .collect()
    });
    let aggregates: Vec<CellAggregate> = cells
        .iter()
        .zip(&statuses)
        .map(|(cell, st)| {
            let done: Vec<(f64, bool)> = st.iter().filter_map(RunStatus::outcome).collect();
            let errors: Vec<f64> = done.iter().map(|d| d.0).collect();
            let (mean, std) = aggregate(&errors);
            CellAggregate {
                key: cell.key.clone(),
                runs: done.len(),
                failed: st.len() - done.len(),
                faults: done.iter().filter(|d| d.1).count(),
                mean,
                std,
            }
        })
        .collect();
    write_aggregates(&out.join(AGGREGATE_FILE), &aggregates)?;
    Ok(aggregates)
}

fn run_one(cell: &Cell, config: &DanConfig, standard: &Dataset, test: &Dataset, runs_dir: &Path) -> RunStatus {
    let hash = config.hash();
    if let Some(s) = read_summary(&run_paths(runs_dir, &hash).1) {
        if s.config_hash == hash && run_paths(runs_dir, &hash).0.is_file() {
            return RunStatus::Reused { final_error: s.final_error, fault: s.fault.is_some() };
        }
    }
    let result = config
        .training_set(standard)
        .and_then(|data| train(config, &data, test))
        .map_err(CliError::from)
        .and_then(|record| write_run(runs_dir, &cell.key, config, &record).map(|_| record));
    match result {
        Ok(r) => RunStatus::Trained { final_error: r.final_error, fault: r.fault.is_some() },
        Err(e) => RunStatus::Failed(e.to_string()),
    }
}

const AGGREGATE_TAIL: [&str; 5] = ["runs", "failed", "faults", "mean", "std"];

pub fn write_aggregates(path: &Path, rows: &[CellAggregate]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CellKey::AXES.iter().chain(&AGGREGATE_TAIL))?;
    for a in rows {
        let tail = [a.runs.to_string(), a.failed.to_string(), a.faults.to_string(), a.mean.to_string(), a.std.to_string()];
        w.write_record(a.key.values().into_iter().map(String::from).chain(tail))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_aggregates(path: &Path) -> Result<Vec<CellAggregate>, CliError> {
    let mut r = csv::Reader::from_path(path)?;
    let bad = |detail: &str| CliError::Parse { path: path.display().to_string(), detail: detail.into() };
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    let expected: Vec<&str> = CellKey::AXES.iter().chain(&AGGREGATE_TAIL).copied().collect();
    if header != expected {
        return Err(bad("unexpected header"));
    }
    let mut out = Vec::new();
    for row in r.records() {
        let row: Vec<String> = row?.iter().map(String::from).collect();
        let num = |i: usize| row[i].parse::<f64>().map_err(|_| bad("non-numeric field"));
        out.push(CellAggregate {
            key: CellKey::from_values(&row[..8]),
            runs: num(8)? as usize,
            failed: num(9)? as usize,
            faults: num(10)? as usize,
            mean: num(11)?,
            std: num(12)?,
        });
    }
    Ok(out)
}

/// All stored runs in `runs_dir`, with their series.
pub fn stored_runs(runs_dir: &Path) -> Result<Vec<(RunSummary, RunRecord)>, CliError> {
    let entries = std::fs::read_dir(runs_dir).map_err(|e| CliError::io(runs_dir, e))?;
    let mut hashes: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(".json")).map(String::from))
        .collect();
    hashes.sort();
    hashes.iter().map(|h| read_run(runs_dir, h)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regularizer_names_round_trip() {
        for name in Regularizer::GRID {
            let r: Regularizer = name.parse().unwrap();
            assert_eq!(r.to_string(), name);
        }
        assert_eq!("SN + TCGP".parse::<Regularizer>().unwrap(), Regularizer::penalty(PenaltyKind::Coupled, Side::TwoSide).with_sn());
        assert_eq!("unregularized".parse::<Regularizer>().unwrap().to_string(), "none");
        assert!("gp".parse::<Regularizer>().is_err());
        assert!("snx".parse::<Regularizer>().is_err());
    }

    #[test]
    fn counting_contract() {
        let spec = SweepSpec {
            losses: vec!["hinge_linear".into(), "wasserstein".into()],
            regularizers: vec!["tcgp".parse().unwrap(), "sn".parse().unwrap()],
            runs_per_cell: 2,
            ..SweepSpec::default()
        };
        let cells = spec.cells();
        assert_eq!(cells.len(), 4);
        let mut hashes: Vec<String> = cells.iter().flat_map(|c| (0..2).map(|r| c.run_config(r).hash())).collect();
        hashes.sort();
        hashes.dedup();
        assert_eq!(hashes.len(), 8);
        assert!(cells[1].config.spectral_norm);
        assert_eq!(cells[1].config.penalty.kind, PenaltyKind::None);
    }

    #[test]
    fn empty_axes_keep_the_base() {
        let spec = SweepSpec::default();
        let cells = spec.cells();
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].config, spec.base);
        assert_eq!(cells[0].key.regularizer, "none");
        assert_eq!(cells[0].key.loss, "classic_nonsaturating");
    }

    #[test]
    fn validation_rejects_bad_cells() {
        let bad_loss = SweepSpec { losses: vec!["nope".into()], ..SweepSpec::default() };
        assert!(bad_loss.validate().is_err());
        let bad_k = SweepSpec { ks: vec![1.0, 0.0], ..SweepSpec::default() };
        assert!(bad_k.validate().is_err());
        let no_runs = SweepSpec { runs_per_cell: 0, ..SweepSpec::default() };
        assert!(no_runs.validate().is_err());
        assert!(SweepSpec::default().validate().is_ok());
    }

    #[test]
    fn sample_statistics() {
        let (m, s) = aggregate(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(aggregate(&[0.3]), (0.3, 0.0));
        assert!(aggregate(&[]).0.is_nan());
    }

    #[test]
    fn sweep_spec_reads_from_toml() {
        let text = "losses = [\"hinge_linear\"]\nregularizers = [\"sn+tcgp\", \"r1\"]\nbeta1s = [[-0.5, 0.0], [0.9, 0.9]]\nruns_per_cell = 3\n[base]\nsteps = 10\n";
        let spec: SweepSpec = toml::from_str(text).unwrap();
        assert_eq!(spec.cells().len(), 4);
        assert_eq!(spec.base.steps, 10);
        assert_eq!(spec.runs_per_cell, 3);
        let bad: Result<SweepSpec, _> = toml::from_str("regularizers = [\"xx\"]");
        assert!(bad.is_err());
    }

    #[test]
    fn aggregates_round_trip_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let key = SweepSpec::default().cells()[0].key.clone();
        let rows = vec![CellAggregate { key, runs: 3, failed: 1, faults: 1, mean: 0.0564, std: 0.0023 }];
        let path = dir.path().join(AGGREGATE_FILE);
        write_aggregates(&path, &rows).unwrap();
        assert_eq!(read_aggregates(&path).unwrap(), rows);
    }
}
