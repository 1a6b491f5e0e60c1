//! Error-rate tables and training curves from sweep results.

use std::collections::BTreeMap;

use crate::smooth::smooth_series;
use crate::sweep::{aggregate, CellAggregate, CellKey, RunSummary};
use advloss_dantest::RunRecord;

/// One entry of a table: mean and standard deviation of final errors.
#[derive(Clone, Debug, PartialEq)]
pub struct TableCell {
    pub row: String,
    pub col: String,
    pub mean: f64,
    pub std: f64,
}

/// `(lowest, lowest_three)` flags for a column of means. Missing (`None`)
/// or NaN entries are never flagged. Every entry equal to the lowest mean
/// is lowest; every entry not above the third smallest mean (counting
/// repeats) is in the lowest three, so ties at the third place all count.
pub fn rank_column(means: &[Option<f64>]) -> Vec<(bool, bool)> {
    let mut present: Vec<f64> = means.iter().flatten().copied().filter(|m| !m.is_nan()).collect();
    present.sort_by(f64::total_cmp);
    let Some(&lowest) = present.first() else { return vec![(false, false); means.len()] };
    let third = present[present.len().min(3) - 1];
    means
        .iter()
        .map(|m| match m {
            Some(m) if !m.is_nan() => (*m == lowest, *m <= third),
            _ => (false, false),
        })
        .collect()
}

fn cell_text(mean: f64, std: f64) -> String {
    format!("{:.2}±{:.2}", 100.0 * mean, 100.0 * std)
}

/// CSV with one line per row label. Each column label contributes a
/// `mean±std` field (percent) and `lowest` / `lowest3` marker fields (1 or
/// 0). Missing cells read `n/a` and take no part in the ranking.
pub fn report_table(cells: &[TableCell], rows: &[String], cols: &[String]) -> String {
    let find = |r: &str, c: &str| cells.iter().find(|t| t.row == r && t.col == c);
    let flags: Vec<Vec<(bool, bool)>> =
        cols.iter().map(|c| rank_column(&rows.iter().map(|r| find(r, c).map(|t| t.mean)).collect::<Vec<_>>())).collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["row".to_string()];
    for c in cols {
        header.extend([c.clone(), format!("{c} lowest"), format!("{c} lowest3")]);
    }
    w.write_record(&header).expect("in-memory write");
    for (i, r) in rows.iter().enumerate() {
        let mut line = vec![r.clone()];
        for (j, c) in cols.iter().enumerate() {
            let text = match find(r, c) {
                Some(t) if !t.mean.is_nan() => cell_text(t.mean, t.std),
                _ => "n/a".to_string(),
            };
            let (lo, lo3) = flags[j][i];
            line.extend([text, u8::from(lo).to_string(), u8::from(lo3).to_string()]);
        }
        w.write_record(&line).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

fn push_unique(list: &mut Vec<String>, v: &str) {
    if !list.iter().any(|x| x == v) {
        list.push(v.to_string());
    }
}

/// Arranges aggregates as a table with `row_axis` down and `col_axis`
/// across. Other axes that take more than one value are appended to the
/// column label as `axis=value`. Labels keep their first-seen order.
pub fn pivot(aggs: &[CellAggregate], row_axis: &str, col_axis: &str) -> Option<(Vec<TableCell>, Vec<String>, Vec<String>)> {
    let varying: Vec<&str> = CellKey::AXES
        .iter()
        .copied()
        .filter(|&a| a != row_axis && a != col_axis)
        .filter(|a| {
            let first = aggs.first().and_then(|x| x.key.axis(a));
            aggs.iter().any(|x| x.key.axis(a) != first)
        })
        .collect();
    let (mut rows, mut cols, mut cells) = (Vec::new(), Vec::new(), Vec::new());
    for a in aggs {
        let row = a.key.axis(row_axis)?.to_string();
        let mut col = a.key.axis(col_axis)?.to_string();
        for v in &varying {
            col.push_str(&format!(" {v}={}", a.key.axis(v)?));
        }
        push_unique(&mut rows, &row);
        push_unique(&mut cols, &col);
        cells.push(TableCell { row, col, mean: if a.runs == 0 { f64::NAN } else { a.mean }, std: a.std });
    }
    Some((cells, rows, cols))
}

/// Per cell and step, the mean and sample std over runs of the
/// median-smoothed error. CSV columns: the axes, then `step,mean,std,runs`.
pub fn curves(runs: &[(RunSummary, RunRecord)]) -> String {
    let mut by_cell: BTreeMap<&CellKey, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for (summary, record) in runs {
        let steps = by_cell.entry(&summary.cell).or_default();
        for p in smooth_series(record) {
            steps.entry(p.step).or_default().push(p.error);
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CellKey::AXES.iter().chain(&["step", "mean", "std", "runs"])).expect("in-memory write");
    for (key, steps) in by_cell {
        for (step, errors) in steps {
            let (mean, std) = aggregate(&errors);
            let tail = [step.to_string(), mean.to_string(), std.to_string(), errors.len().to_string()];
            w.write_record(key.values().into_iter().map(String::from).chain(tail)).expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}
