//! `ψ` against closed forms derived by hand from the stationarity condition
//! `∂Ψ/∂y = 0`.

use advloss_core::landscape::{gamma_grid, psi_small, Argmax, SearchConfig};
use advloss_core::{epsilon_weighted, get_loss, ComponentLoss};

fn entropy_form(g: f64) -> f64 {
    let t = |p: f64| if p == 0.0 { 0.0 } else { p * p.ln() };
    t(g) + t(1.0 - g)
}

fn check_curve(loss: &ComponentLoss, oracle: impl Fn(f64) -> f64, tol: f64) {
    let s = SearchConfig::default();
    for g in gamma_grid(100) {
        let got = psi_small(loss, g, &s).unwrap().psi;
        let want = oracle(g);
        assert!(got == want || (got - want).abs() < tol, "{} at γ={g}: {got} vs {want}", loss.name);
    }
}

#[test]
fn classic_family_is_negative_entropy() {
    for name in ["classic_minimax", "classic_nonsaturating", "classic_linear"] {
        check_curve(&get_loss(name).unwrap(), entropy_form, 1e-6);
    }
}

#[test]
fn least_squares_is_minus_gamma_one_minus_gamma() {
    check_curve(&get_loss("least_squares").unwrap(), |g| -g * (1.0 - g), 1e-6);
}

#[test]
fn hinge_is_minus_twice_the_smaller_share() {
    // Ψ is piecewise linear in y with corners at ±1; the better corner gives
    // −2·min(γ, 1 − γ).
    for name in ["hinge_minimax", "hinge_nonsaturating", "hinge_linear"] {
        check_curve(&get_loss(name).unwrap(), |g| -2.0 * g.min(1.0 - g), 1e-6);
    }
}

#[test]
fn absolute_is_minus_the_smaller_share() {
    // Ψ(γ, 0) = −γ and Ψ(γ, 1) = −(1 − γ); Ψ is linear between and decays outside.
    check_curve(&get_loss("absolute").unwrap(), |g| -g.min(1.0 - g), 1e-6);
}

#[test]
fn asymmetric_is_zero_above_half_and_infinite_below() {
    check_curve(&get_loss("asymmetric").unwrap(), |g| if g >= 0.5 { 0.0 } else { f64::INFINITY }, 1e-9);
}

#[test]
fn weighted_classic_follows_shifted_sigmoid() {
    // σ(y) = εγ / (εγ + 1 − γ) at the optimum.
    for eps in [0.5, 2.0] {
        let l = epsilon_weighted(&get_loss("classic_minimax").unwrap(), eps).unwrap();
        check_curve(
            &l,
            |g| {
                let s = eps * g / (eps * g + 1.0 - g);
                let t = |w: f64, p: f64| if w == 0.0 { 0.0 } else { w * p.ln() };
                t(eps * g, s) + t(1.0 - g, 1.0 - s)
            },
            1e-6,
        );
    }
}

#[test]
fn weighted_hinge_above_one_third() {
    let l = epsilon_weighted(&get_loss("hinge_linear").unwrap(), 2.0).unwrap();
    let s = SearchConfig::default();
    for g in gamma_grid(100).into_iter().filter(|&g| g > 0.34) {
        let got = psi_small(&l, g, &s).unwrap().psi;
        assert!((got - (2.0 * g - 2.0)).abs() < 1e-9, "γ={g}: {got}");
    }
}

#[test]
fn wasserstein_is_defined_only_at_the_balance_point() {
    let s = SearchConfig::default();
    let w = get_loss("wasserstein").unwrap();
    for g in gamma_grid(100) {
        let p = psi_small(&w, g, &s).unwrap();
        if (g - 0.5).abs() < 1e-12 {
            assert_eq!(p.psi, 0.0);
        } else {
            assert_eq!(p.psi, f64::INFINITY, "γ={g}");
            assert!(matches!(p.argmax, Argmax::Divergent { .. }));
        }
    }
}

#[test]
fn argmax_points_match_stationarity() {
    let s = SearchConfig::default();
    let cm = get_loss("classic_minimax").unwrap();
    for g in [0.1f64, 0.3, 0.5, 0.8] {
        let want = (g / (1.0 - g)).ln();
        match psi_small(&cm, g, &s).unwrap().argmax {
            Argmax::Point(y) => assert!((y - want).abs() < 1e-4, "γ={g}: {y} vs {want}"),
            other => panic!("{other:?}"),
        }
    }
}
