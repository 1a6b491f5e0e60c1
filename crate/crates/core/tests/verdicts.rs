//! Verdicts across the catalog and its weighted variants.

use advloss_core::landscape::{gamma_grid, profile};
use advloss_core::loss_catalog::{CATALOG, REFERENCE_LOSSES};
use advloss_core::validity::{check_crossing, classify, classify_profile, ValidityConfig, Verdict};
use advloss_core::{epsilon_weighted, get_loss, ComponentLoss};

fn cfg() -> ValidityConfig {
    ValidityConfig::default()
}

fn weighted(name: &str, eps: f64) -> ComponentLoss {
    epsilon_weighted(&get_loss(name).unwrap(), eps).unwrap()
}

fn pointwise_losses() -> Vec<ComponentLoss> {
    CATALOG.iter().map(|n| get_loss(n).unwrap()).filter(|l| l.pointwise).collect()
}

#[test]
fn reference_losses_are_strongly_supported() {
    for (name, _) in REFERENCE_LOSSES {
        assert_eq!(classify(&get_loss(name).unwrap(), &cfg()).unwrap().verdict, Verdict::SupportedStrong, "{name}");
    }
}

#[test]
fn reference_roots_and_concavity() {
    for (name, y_star) in REFERENCE_LOSSES {
        let t = check_crossing(&get_loss(name).unwrap(), &cfg()).unwrap();
        assert!((t.y_star.unwrap() - y_star).abs() < 1e-6, "{name}: {:?}", t.y_star);
        assert!(t.concavity_ok && t.boundary_condition_ok && !t.kink_blocked, "{name}");
    }
}

#[test]
fn weighted_variants_lose_the_strong_verdict() {
    for name in ["classic_nonsaturating", "hinge_linear", "wasserstein"] {
        for eps in [0.5, 2.0] {
            let v = classify(&weighted(name, eps), &cfg()).unwrap().verdict;
            assert_ne!(v, Verdict::SupportedStrong, "{name} eps={eps}");
        }
    }
}

#[test]
fn weighted_classic_minimum_moves_off_half() {
    let r = classify(&weighted("classic_nonsaturating", 2.0), &cfg()).unwrap();
    assert!(!r.min_location.global_min_at_half);
    assert!((r.min_location.gamma - 0.5).abs() > 0.01);
}

#[test]
fn weighted_wasserstein_cannot_be_anchored() {
    let r = classify(&weighted("wasserstein", 2.0), &cfg()).unwrap();
    assert_eq!(r.verdict, Verdict::Inconclusive);
    assert_eq!(r.necessary_ok, None);
}

#[test]
fn absolute_loss() {
    let r = classify(&get_loss("absolute").unwrap(), &cfg()).unwrap();
    assert_eq!(r.verdict, Verdict::SupportedStrong);
    assert!(r.min_location.unique);
    // f − g changes sign at ½ where both pieces are differentiable.
    assert!((r.crossing.y_star.unwrap() - 0.5).abs() < 1e-9);
    assert!(r.crossing.holds());
}

#[test]
fn asymmetric_loss_is_only_weakly_supported() {
    let r = classify(&get_loss("asymmetric").unwrap(), &cfg()).unwrap();
    assert_eq!(r.verdict, Verdict::SupportedWeak);
    assert!(r.min_location.global_min_at_half && !r.min_location.unique);
    assert!(r.crossing.kink_blocked);
}

#[test]
fn unit_weight_is_the_identity() {
    for l in pointwise_losses() {
        let a = classify(&l, &cfg()).unwrap();
        let b = classify(&epsilon_weighted(&l, 1.0).unwrap(), &cfg()).unwrap();
        assert_eq!(a, b, "{}", l.name);
    }
}

#[test]
fn strong_never_coexists_with_a_failed_strict_margin() {
    for l in pointwise_losses() {
        for eps in [0.5, 0.9, 1.0, 1.1, 2.0] {
            let r = classify(&epsilon_weighted(&l, eps).unwrap(), &cfg()).unwrap();
            if r.verdict == Verdict::SupportedStrong {
                assert_eq!(r.strict_necessary_ok, Some(true), "{}", r.loss);
            }
        }
    }
}

#[test]
fn refining_gamma_never_rescues_a_refutation() {
    let coarse = ValidityConfig { gamma_intervals: 500, ..cfg() };
    for l in pointwise_losses() {
        for eps in [0.5, 1.0, 2.0] {
            let l = epsilon_weighted(&l, eps).unwrap();
            let a = classify(&l, &coarse).unwrap().verdict;
            let b = classify(&l, &cfg()).unwrap().verdict;
            if a == Verdict::Refuted {
                assert!(!matches!(b, Verdict::SupportedStrong | Verdict::SupportedWeak), "{}", l.label());
            }
        }
    }
}

#[test]
fn a_profile_with_a_peak_at_half_is_refuted() {
    // Margins only go negative when ψ bends down at ½; feed such a profile
    // directly by flipping a valid one.
    let l = get_loss("least_squares").unwrap();
    let mut p = profile(&l, &gamma_grid(100), &cfg().search).unwrap();
    for v in &mut p.psi {
        *v = -*v;
    }
    let r = classify_profile(&l, &p, &cfg()).unwrap();
    assert_eq!(r.verdict, Verdict::Refuted);
    assert_eq!(r.necessary_ok, Some(false));
}
