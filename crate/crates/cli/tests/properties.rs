use advloss::report::rank_column;
use advloss::{aggregate, median_filter};
use proptest::prelude::*;

fn column() -> impl Strategy<Value = Vec<Option<f64>>> {
    prop::collection::vec(prop::option::of(prop_oneof![(0u8..6).prop_map(|v| v as f64 / 10.0), Just(f64::NAN)]), 0..10)
}

proptest! {
    #[test]
    fn ranking_flags_are_consistent(means in column()) {
        let flags = rank_column(&means);
        prop_assert_eq!(flags.len(), means.len());
        let present: Vec<f64> = means.iter().flatten().copied().filter(|m| !m.is_nan()).collect();
        for (m, (lo, lo3)) in means.iter().zip(&flags) {
            if *lo { prop_assert!(*lo3); }
            match m {
                Some(v) if !v.is_nan() => {
                    prop_assert_eq!(*lo, present.iter().all(|p| v <= p));
                    // In the lowest three exactly when fewer than three present means lie strictly below.
                    prop_assert_eq!(*lo3, present.iter().filter(|p| *p < v).count() < 3);
                }
                _ => prop_assert!(!lo && !lo3),
            }
        }
        if !present.is_empty() {
            prop_assert!(flags.iter().any(|f| f.0));
            prop_assert!(flags.iter().filter(|f| f.1).count() >= present.len().min(3));
        }
    }

    #[test]
    fn median_filter_is_bounded_and_order_free(values in prop::collection::vec(-1.0f64..1.0, 0..40)) {
        let out = median_filter(&values, 5);
        prop_assert_eq!(out.len(), values.len());
        if let (Some(f), Some(l)) = (values.first(), values.last()) {
            prop_assert_eq!(out[0], *f);
            prop_assert_eq!(*out.last().unwrap(), *l);
        }
        for (i, o) in out.iter().enumerate() {
            let w = &values[i.saturating_sub(2)..(i + 3).min(values.len())];
            prop_assert!(w.iter().any(|v| v == o));
            prop_assert!(w.iter().cloned().fold(f64::INFINITY, f64::min) <= *o);
            prop_assert!(w.iter().cloned().fold(f64::NEG_INFINITY, f64::max) >= *o);
        }
        let sorted = { let mut s = values.clone(); s.sort_by(f64::total_cmp); s };
        prop_assert_eq!(median_filter(&sorted, 5), sorted);
    }

    #[test]
    fn aggregate_matches_shift_and_scale(values in prop::collection::vec(-1.0f64..1.0, 1..20), shift in -5.0f64..5.0) {
        let (m, s) = aggregate(&values);
        let moved: Vec<f64> = values.iter().map(|v| 2.0 * v + shift).collect();
        let (m2, s2) = aggregate(&moved);
        prop_assert!((m2 - (2.0 * m + shift)).abs() < 1e-9);
        prop_assert!((s2 - 2.0 * s).abs() < 1e-9);
        prop_assert!(s >= 0.0);
        if values.len() == 1 { prop_assert_eq!(s, 0.0); }
    }
}
