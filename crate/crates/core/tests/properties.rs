use advloss_core::landscape::{psi_small, SearchConfig};
use advloss_core::loss_catalog::{eval_derivatives, CATALOG};
use advloss_core::{epsilon_weighted, get_loss, psi_big};
use proptest::prelude::*;

fn pointwise_name() -> impl Strategy<Value = &'static str> {
    prop::sample::select(CATALOG.iter().copied().filter(|n| get_loss(n).unwrap().pointwise).collect::<Vec<_>>())
}

proptest! {
    #[test]
    fn components_are_finite(name in prop::sample::select(CATALOG.to_vec()), y in -1e3f64..1e3) {
        let l = get_loss(name).unwrap();
        prop_assert!(l.f.eval(y).is_finite() && l.g.eval(y).is_finite() && l.h.eval(y).is_finite());
    }

    #[test]
    fn derivatives_match_central_differences(name in pointwise_name(), y in -20f64..20.0) {
        let l = get_loss(name).unwrap();
        let h = 1e-5;
        // Keep the stencil off the kinks.
        prop_assume!(l.kinks().iter().all(|k| (y - k).abs() > 1e-3));
        prop_assume!(l.h.kink().is_none_or(|k| (y - k).abs() > 1e-3));
        let d = eval_derivatives(&l, y);
        for (c, analytic) in [(&l.f, d.f1), (&l.g, d.g1), (&l.h, l.h.derivative(y))] {
            let numeric = (c.eval(y + h) - c.eval(y - h)) / (2.0 * h);
            let rel = (analytic - numeric).abs() / analytic.abs().max(1e-3);
            prop_assert!(rel < 1e-6, "{name} at {y}: {analytic} vs {numeric}");
        }
        for (c, analytic) in [(&l.f, d.f2), (&l.g, d.g2)] {
            let numeric = (c.derivative(y + h) - c.derivative(y - h)) / (2.0 * h);
            prop_assert!((analytic - numeric).abs() < 1e-6, "{name} at {y}");
        }
    }

    #[test]
    fn psi_dominates_every_sample(
        name in pointwise_name(),
        eps in prop::sample::select(vec![0.5, 1.0, 2.0]),
        gamma in 0f64..=1.0,
        ys in prop::collection::vec(-50f64..50.0, 1..40),
    ) {
        let l = epsilon_weighted(&get_loss(name).unwrap(), eps).unwrap();
        let p = psi_small(&l, gamma, &SearchConfig::default()).unwrap();
        for y in ys {
            prop_assert!(p.psi >= psi_big(&l, gamma, y).unwrap() - 1e-9);
        }
    }

    #[test]
    fn argmax_intervals_are_level(name in pointwise_name(), gamma in 0f64..=1.0) {
        let l = get_loss(name).unwrap();
        let s = SearchConfig::default();
        let p = psi_small(&l, gamma, &s).unwrap();
        // Edges are bisected onto the tolerance boundary itself, so allow rounding.
        let tol = s.interval_tol + 1e-12;
        if let advloss_core::Argmax::Interval { lo, hi } = p.argmax {
            prop_assert!((psi_big(&l, gamma, lo).unwrap() - p.psi).abs() <= tol);
            prop_assert!((psi_big(&l, gamma, hi).unwrap() - p.psi).abs() <= tol);
        }
    }
}
