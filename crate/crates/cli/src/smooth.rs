//! Median smoothing of evaluation series.

use advloss_dantest::trainer::EvalPoint;
use advloss_dantest::RunRecord;

/// Running median over `width` points (odd). Near the ends the window
/// shrinks symmetrically, so the first and last values pass through.
pub fn median_filter(values: &[f64], width: usize) -> Vec<f64> {
    let half = width / 2;
    let n = values.len();
    (0..n)
        .map(|i| {
            let h = half.min(i).min(n - 1 - i);
            let mut w = values[i - h..=i + h].to_vec();
            w.sort_by(f64::total_cmp);
            w[h]
        })
        .collect()
}

/// The error series of `record` through a 5-point median filter.
pub fn smooth_series(record: &RunRecord) -> Vec<EvalPoint> {
    let errors: Vec<f64> = record.series.iter().map(|p| p.error).collect();
    record.series.iter().zip(median_filter(&errors, 5)).map(|(p, error)| EvalPoint { step: p.step, error }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_series_is_unchanged() {
        assert_eq!(median_filter(&[0.2; 9], 5), vec![0.2; 9]);
    }

    #[test]
    fn single_spike_is_removed() {
        let mut v = vec![0.1; 9];
        v[4] = 0.9;
        assert_eq!(median_filter(&v, 5), vec![0.1; 9]);
    }

    #[test]
    fn worked_example() {
        let out = median_filter(&[1.0, 2.0, 3.0, 4.0, 100.0, 6.0, 7.0], 5);
        // Windows: [1], [1 2 3], [1..5], [2 3 4 100 6], [3 4 100 6 7], [100 6 7], [7].
        assert_eq!(out, vec![1.0, 2.0, 3.0, 4.0, 6.0, 7.0, 7.0]);
    }

    #[test]
    fn short_and_empty_series() {
        assert!(median_filter(&[], 5).is_empty());
        assert_eq!(median_filter(&[3.0], 5), vec![3.0]);
        assert_eq!(median_filter(&[3.0, 1.0], 5), vec![3.0, 1.0]);
    }

    #[test]
    fn smoothing_keeps_steps() {
        let series: Vec<EvalPoint> = [0.5, 0.4, 0.9, 0.3, 0.2].iter().enumerate().map(|(i, &e)| EvalPoint { step: 100 * (i + 1), error: e }).collect();
        let record = RunRecord { series, final_error: 0.2, wall_time_secs: 0.0, config_hash: String::new(), fault: None };
        let s = smooth_series(&record);
        assert_eq!(s.iter().map(|p| p.step).collect::<Vec<_>>(), vec![100, 200, 300, 400, 500]);
        assert_eq!(s[2].error, 0.4);
    }
}
