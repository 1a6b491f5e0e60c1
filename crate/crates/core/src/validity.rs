//! Numerical checks of the conditions under which minimizing `ψ` drives the
//! model distribution to the data distribution.
//!
//! * necessary: `ψ(γ) + ψ(1 − γ) ≥ 2ψ(½)` for all `γ` (strictly `>` for
//!   `γ ≠ ½` when a unique optimum is claimed);
//! * sufficient: `ψ` has a global minimum at `½` (unique for the strong
//!   form);
//! * pointwise: `εf'' + g'' ≤ 0` and some `y*` has `εf(y*) = g(y*)` and
//!   `εf'(y*) = −g'(y*) ≠ 0`.
//!
//! Grid checks can find counterexamples but only support universal claims,
//! hence the verdicts are "supported" or "refuted", never "proven".

use serde::{Serialize, Serializer};

use crate::error::CoreError;
use crate::landscape::{gamma_grid, profile, PsiProfile, SearchConfig};
use crate::loss_catalog::{eval_derivatives, ComponentLoss};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ValidityConfig {
    /// Slack on margin comparisons.
    pub tau: f64,
    /// The `γ` grid has `gamma_intervals + 1` points (must be even).
    pub gamma_intervals: usize,
    pub search: SearchConfig,
    /// Points in the sign-change scan for roots of `εf − g`.
    pub root_scan: usize,
    /// Points on which `εf'' + g''` is checked.
    pub concavity_grid: usize,
    /// Threshold for derivative equalities and non-vanishing.
    pub deriv_tol: f64,
}

impl Default for ValidityConfig {
    fn default() -> Self {
        Self {
            tau: 1e-9,
            gamma_intervals: 1000,
            search: SearchConfig::default(),
            root_scan: 10_001,
            concavity_grid: 10_000,
            deriv_tol: 1e-7,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Verdict {
    SupportedStrong,
    SupportedWeak,
    Refuted,
    Inconclusive,
}

fn ext_real<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if v.is_nan() {
        s.serialize_str("nan")
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Margin {
    pub gamma: f64,
    /// `ψ(γ) + ψ(1 − γ) − 2ψ(½)`
    #[serde(serialize_with = "ext_real")]
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NecessaryCheck {
    pub margins: Vec<Margin>,
    /// `None` when `ψ(½)` is not finite and nothing can be anchored.
    pub passed: Option<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MinLocation {
    /// First grid `γ` attaining the smallest `ψ`.
    pub gamma: f64,
    pub global_min_at_half: bool,
    pub unique: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CrossingCondition {
    pub y_star: Option<f64>,
    pub boundary_condition_ok: bool,
    pub concavity_ok: bool,
    /// A root of `εf − g` was found but sits on a kink, where the derivative
    /// conditions cannot be evaluated.
    pub kink_blocked: bool,
}

impl CrossingCondition {
    pub fn holds(&self) -> bool {
        self.y_star.is_some() && self.boundary_condition_ok && self.concavity_ok && !self.kink_blocked
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidityReport {
    pub loss: String,
    pub epsilon: f64,
    pub margins: Vec<Margin>,
    pub necessary_ok: Option<bool>,
    pub strict_necessary_ok: Option<bool>,
    pub min_location: MinLocation,
    pub crossing: CrossingCondition,
    pub verdict: Verdict,
}

fn anchor(profile: &PsiProfile) -> Result<(usize, f64), CoreError> {
    if !profile.is_symmetric() {
        return Err(CoreError::InvalidGrid("gamma grid is not symmetric about 1/2".into()));
    }
    let half = profile
        .half_index()
        .ok_or_else(|| CoreError::InvalidGrid("gamma grid does not contain 1/2".into()))?;
    Ok((half, profile.psi[half]))
}

/// Margins `ψ(γ) + ψ(1 − γ) − 2ψ(½)` for `γ < ½`. Non-strict mode passes
/// when every margin is `≥ −τ`; strict mode when every margin is `> τ`.
/// Infinite margins pass either way.
pub fn check_necessary(profile: &PsiProfile, strict: bool, tau: f64) -> Result<NecessaryCheck, CoreError> {
    let (half, p_half) = anchor(profile)?;
    if !p_half.is_finite() {
        return Ok(NecessaryCheck { margins: Vec::new(), passed: None });
    }
    let margins: Vec<Margin> = (0..half)
        .map(|i| Margin { gamma: profile.gammas[i], margin: profile.psi[i] + profile.psi[profile.mirror(i)] - 2.0 * p_half })
        .collect();
    let ok = |m: &Margin| if strict { m.margin > tau } else { m.margin >= -tau };
    let passed = margins.iter().all(ok);
    Ok(NecessaryCheck { margins, passed: Some(passed) })
}

/// Whether `ψ(½)` is a global minimum on the grid, and whether every `γ`
/// more than one grid step from `½` is strictly worse.
pub fn check_sufficient(profile: &PsiProfile, tau: f64) -> Result<MinLocation, CoreError> {
    let (half, p_half) = anchor(profile)?;
    let mut argmin = 0;
    for (i, &p) in profile.psi.iter().enumerate() {
        if p < profile.psi[argmin] {
            argmin = i;
        }
    }
    if !p_half.is_finite() {
        return Ok(MinLocation { gamma: profile.gammas[argmin], global_min_at_half: false, unique: false });
    }
    let global = profile.psi.iter().all(|&p| p >= p_half - tau);
    let unique = global && profile.psi.iter().enumerate().all(|(i, &p)| i.abs_diff(half) <= 1 || p > p_half + tau);
    Ok(MinLocation { gamma: profile.gammas[argmin], global_min_at_half: global, unique })
}

fn bisect<P: Fn(f64) -> bool>(pred: P, mut yes: f64, mut no: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (yes + no);
        if mid == yes || mid == no {
            break;
        }
        if pred(mid) {
            yes = mid;
        } else {
            no = mid;
        }
    }
    yes
}

/// Roots of `εf − g` on the search window: sign changes refined by
/// bisection, and the left end of every run of exact zeros.
fn roots(loss: &ComponentLoss, cfg: &ValidityConfig) -> Vec<f64> {
    let eps = loss.epsilon;
    let d = |y: f64| eps * loss.f.eval(y) - loss.g.eval(y);
    let zero = |y: f64| d(y).abs() <= 1e-12;
    let m = cfg.root_scan.max(2);
    let y_max = cfg.search.y_max;
    let y_at = |i: usize| -y_max + 2.0 * y_max * i as f64 / (m - 1) as f64;
    let mut out = Vec::new();
    let mut prev = d(y_at(0));
    if prev.abs() <= 1e-12 {
        out.push(y_at(0));
    }
    for i in 1..m {
        let y = y_at(i);
        let cur = d(y);
        let cur_zero = cur.abs() <= 1e-12;
        let prev_zero = prev.abs() <= 1e-12;
        if cur_zero && !prev_zero {
            let isolated = i + 1 == m || d(y_at(i + 1)).abs() > 1e-12;
            out.push(if isolated { y } else { bisect(zero, y, y_at(i - 1)) });
        } else if !cur_zero && !prev_zero && cur.signum() != prev.signum() {
            let positive_right = cur > 0.0;
            let r = bisect(|t| (d(t) > 0.0) == positive_right, y, y_at(i - 1));
            out.push(r);
        }
        prev = cur;
    }
    out
}

pub fn check_crossing(loss: &ComponentLoss, cfg: &ValidityConfig) -> Result<CrossingCondition, CoreError> {
    if !loss.pointwise {
        return Err(CoreError::Unsupported { name: loss.name, what: "pointwise derivative checks" });
    }
    let eps = loss.epsilon;
    let y_max = cfg.search.y_max;

    let n = cfg.concavity_grid.max(2);
    let smooth_ok = (0..n).all(|i| {
        let y = -y_max + 2.0 * y_max * i as f64 / (n - 1) as f64;
        let d = eval_derivatives(loss, y);
        d.kink || eps * d.f2 + d.g2 <= cfg.tau
    });
    // At a kink the second derivative is a point mass of size (right − left slope).
    let kinks_ok = loss.kinks().into_iter().filter(|k| k.abs() <= y_max).all(|k| {
        let (fl, fr) = loss.f.slopes(k);
        let (gl, gr) = loss.g.slopes(k);
        eps * (fr - fl) + (gr - gl) <= cfg.tau
    });
    let concavity_ok = smooth_ok && kinks_ok;

    let found = roots(loss, cfg);
    let mut kink_blocked = false;
    for &r in &found {
        let d = eval_derivatives(loss, r);
        if d.kink {
            kink_blocked = true;
            continue;
        }
        if (eps * d.f1 + d.g1).abs() < cfg.deriv_tol && (eps * d.f1).abs() > cfg.deriv_tol {
            return Ok(CrossingCondition { y_star: Some(r), boundary_condition_ok: true, concavity_ok, kink_blocked: false });
        }
    }
    Ok(CrossingCondition { y_star: found.first().copied(), boundary_condition_ok: false, concavity_ok, kink_blocked })
}

/// Runs every check on the default symmetric `γ` grid and combines them.
///
/// * `Inconclusive` if `ψ(½)` is not finite;
/// * `Refuted` if a necessary margin is below `−τ`, or a strict margin
///   fails while the strong form is otherwise supported;
/// * `SupportedStrong` if the minimum at `½` is unique or the pointwise
///   conditions hold;
/// * `SupportedWeak` if `½` is a non-unique global minimum;
/// * `Inconclusive` otherwise.
pub fn classify(loss: &ComponentLoss, cfg: &ValidityConfig) -> Result<ValidityReport, CoreError> {
    if !cfg.gamma_intervals.is_multiple_of(2) {
        return Err(CoreError::InvalidGrid("gamma_intervals must be even".into()));
    }
    let prof = profile(loss, &gamma_grid(cfg.gamma_intervals), &cfg.search)?;
    classify_profile(loss, &prof, cfg)
}

/// As [`classify`], on a caller-supplied profile of the same loss.
pub fn classify_profile(loss: &ComponentLoss, prof: &PsiProfile, cfg: &ValidityConfig) -> Result<ValidityReport, CoreError> {
    let weak = check_necessary(prof, false, cfg.tau)?;
    let strict = check_necessary(prof, true, cfg.tau)?;
    let min_location = check_sufficient(prof, cfg.tau)?;
    let crossing = check_crossing(loss, cfg)?;

    let verdict = match (weak.passed, strict.passed) {
        (None, _) | (_, None) => Verdict::Inconclusive,
        (Some(false), _) => Verdict::Refuted,
        (Some(true), Some(strict_ok)) => {
            let strong_claim = min_location.unique || crossing.holds();
            if strong_claim && !strict_ok {
                Verdict::Refuted
            } else if strong_claim {
                Verdict::SupportedStrong
            } else if min_location.global_min_at_half {
                Verdict::SupportedWeak
            } else {
                Verdict::Inconclusive
            }
        }
    };
    Ok(ValidityReport {
        loss: loss.label(),
        epsilon: loss.epsilon,
        margins: weak.margins,
        necessary_ok: weak.passed,
        strict_necessary_ok: strict.passed,
        min_location,
        crossing,
        verdict,
    })
}
