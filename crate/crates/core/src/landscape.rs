//! The landscapes `Ψ(γ, y) = ε·γ·f(y) + (1 − γ)·g(y)` and
//! `ψ(γ) = max_y Ψ(γ, y)`.
//!
//! `γ` is the share of real data at a point of the input space, so `ψ` is
//! what the optimal discriminator leaves for the generator to minimize.
//! `ψ` can be `+∞` when `Ψ` grows without bound in `y`.

use std::fs::File;
use std::path::Path;

use serde::Serialize;

use crate::error::CoreError;
use crate::loss_catalog::ComponentLoss;

/// Inner maximization settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SearchConfig {
    /// Search window is `[-y_max, y_max]`.
    pub y_max: f64,
    /// Number of grid points on the window.
    pub grid: usize,
    /// Grid points within this of the maximum belong to the argmax set.
    pub interval_tol: f64,
    /// Outward slope at a boundary above which the maximum is unbounded.
    pub slope_tol: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { y_max: 50.0, grid: 4096, interval_tol: 1e-7, slope_tol: 1e-6 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Argmax {
    Point(f64),
    Interval { lo: f64, hi: f64 },
    /// `Ψ` keeps increasing toward `+∞` (or `-∞`) in `y`.
    Divergent { toward_positive: bool },
}

impl Argmax {
    /// Hull bounds; infinite on the divergent side.
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            Argmax::Point(y) => (y, y),
            Argmax::Interval { lo, hi } => (lo, hi),
            Argmax::Divergent { toward_positive: true } => (f64::INFINITY, f64::INFINITY),
            Argmax::Divergent { toward_positive: false } => (f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PsiPoint {
    pub psi: f64,
    pub argmax: Argmax,
}

/// `ψ` sampled on a grid of `γ`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PsiProfile {
    pub gammas: Vec<f64>,
    pub psi: Vec<f64>,
    pub argmax: Vec<Argmax>,
    pub search_bound: f64,
}

fn weighted(loss: &ComponentLoss, gamma: f64, y: f64) -> f64 {
    loss.epsilon * gamma * loss.f.eval(y) + (1.0 - gamma) * loss.g.eval(y)
}

fn require_pointwise(loss: &ComponentLoss) -> Result<(), CoreError> {
    if loss.pointwise {
        Ok(())
    } else {
        Err(CoreError::Unsupported { name: loss.name, what: "landscape analysis" })
    }
}

pub fn psi_big(loss: &ComponentLoss, gamma: f64, y: f64) -> Result<f64, CoreError> {
    require_pointwise(loss)?;
    Ok(weighted(loss, gamma, y))
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Maximizes `f` on `[a, b]`; returns the best abscissa seen.
fn golden_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, xtol: f64) -> (f64, f64) {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > xtol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Boundary between `inside` (predicate true) and `outside` (false).
fn bisect_edge<P: Fn(f64) -> bool>(pred: P, mut inside: f64, mut outside: f64) -> f64 {
    for _ in 0..100 {
        let mid = 0.5 * (inside + outside);
        if mid == inside || mid == outside {
            break;
        }
        if pred(mid) {
            inside = mid;
        } else {
            outside = mid;
        }
    }
    inside
}

/// `ψ(γ)` with its argmax set.
///
/// Grid search over the window, golden-section refinement on the winning
/// cell, and exact evaluation at the kinks of `f` and `g`. When the maximum
/// sits on a window edge and `Ψ` still climbs outward there, the result is
/// `+∞`.
pub fn psi_small(loss: &ComponentLoss, gamma: f64, search: &SearchConfig) -> Result<PsiPoint, CoreError> {
    require_pointwise(loss)?;
    let n = search.grid.max(3);
    let y_max = search.y_max;
    let step = 2.0 * y_max / (n - 1) as f64;
    let y_at = |i: usize| -y_max + 2.0 * y_max * i as f64 / (n - 1) as f64;
    let psi = |y: f64| weighted(loss, gamma, y);
    let vals: Vec<f64> = (0..n).map(|i| psi(y_at(i))).collect();

    let mut imax = 0;
    for (i, &v) in vals.iter().enumerate() {
        if v > vals[imax] {
            imax = i;
        }
    }
    let vmax = vals[imax];

    let left_slope = (vals[0] - vals[1]) / step;
    let right_slope = (vals[n - 1] - vals[n - 2]) / step;
    let left_div = vals[0] >= vmax - search.interval_tol && left_slope > search.slope_tol;
    let right_div = vals[n - 1] >= vmax - search.interval_tol && right_slope > search.slope_tol;
    if left_div || right_div {
        let toward_positive = right_div && (!left_div || right_slope >= left_slope);
        return Ok(PsiPoint { psi: f64::INFINITY, argmax: Argmax::Divergent { toward_positive } });
    }

    let lo = y_at(imax.saturating_sub(1));
    let hi = y_at((imax + 1).min(n - 1));
    let (mut best_y, mut best) = golden_max(psi, lo, hi, 1e-12);
    if vmax > best {
        best_y = y_at(imax);
        best = vmax;
    }
    for k in loss.kinks() {
        if k.abs() <= y_max && psi(k) > best {
            best_y = k;
            best = psi(k);
        }
    }

    let within = |y: f64| psi(y) >= best - search.interval_tol;
    let near: Vec<usize> = (0..n).filter(|&i| vals[i] >= best - search.interval_tol).collect();
    let argmax = if near.len() >= 2 {
        let (first, last) = (near[0], near[near.len() - 1]);
        let lo = if first == 0 { -y_max } else { bisect_edge(within, y_at(first), y_at(first - 1)) };
        let hi = if last == n - 1 { y_max } else { bisect_edge(within, y_at(last), y_at(last + 1)) };
        Argmax::Interval { lo: lo.min(best_y), hi: hi.max(best_y) }
    } else {
        Argmax::Point(best_y)
    };
    Ok(PsiPoint { psi: best, argmax })
}

/// `γ_i = i / intervals` for `i = 0..=intervals`; symmetric about ½ when
/// `intervals` is even.
pub fn gamma_grid(intervals: usize) -> Vec<f64> {
    (0..=intervals).map(|i| i as f64 / intervals as f64).collect()
}

fn check_grid(name: &str, grid: &[f64], lo: f64, hi: f64) -> Result<(), CoreError> {
    if grid.is_empty() {
        return Err(CoreError::InvalidGrid(format!("{name} grid is empty")));
    }
    if grid.windows(2).any(|w| w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Greater)) {
        return Err(CoreError::InvalidGrid(format!("{name} grid is not strictly increasing")));
    }
    if grid[0] < lo || grid[grid.len() - 1] > hi || grid.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::InvalidGrid(format!("{name} grid leaves [{lo}, {hi}]")));
    }
    Ok(())
}

pub fn profile(loss: &ComponentLoss, gammas: &[f64], search: &SearchConfig) -> Result<PsiProfile, CoreError> {
    require_pointwise(loss)?;
    check_grid("gamma", gammas, 0.0, 1.0)?;
    let points = gammas.iter().map(|&g| psi_small(loss, g, search)).collect::<Result<Vec<_>, _>>()?;
    Ok(PsiProfile {
        gammas: gammas.to_vec(),
        psi: points.iter().map(|p| p.psi).collect(),
        argmax: points.iter().map(|p| p.argmax).collect(),
        search_bound: search.y_max,
    })
}

impl PsiProfile {
    /// Index of `1 − γ_i`, assuming the grid is symmetric about ½.
    pub fn mirror(&self, i: usize) -> usize {
        self.gammas.len() - 1 - i
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.gammas.len()).all(|i| (self.gammas[i] + self.gammas[self.mirror(i)] - 1.0).abs() < 1e-12)
    }

    /// Index of `γ = ½`, if present.
    pub fn half_index(&self) -> Option<usize> {
        self.gammas.iter().position(|&g| (g - 0.5).abs() < 1e-12)
    }

    /// Largest `|ψ(γ) − ψ(1 − γ)|`; infinite when only one side diverges.
    pub fn symmetry_defect(&self) -> f64 {
        (0..self.gammas.len())
            .map(|i| {
                let (a, b) = (self.psi[i], self.psi[self.mirror(i)]);
                if a == b {
                    0.0
                } else {
                    (a - b).abs()
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Largest amount by which `ψ` drops when the inner grid is made twice as
/// dense. Divergent entries are skipped.
pub fn refinement_defect(loss: &ComponentLoss, gammas: &[f64], search: &SearchConfig) -> Result<f64, CoreError> {
    let fine = SearchConfig { grid: 2 * search.grid - 1, ..*search };
    let mut worst = 0.0f64;
    for &g in gammas {
        let a = psi_small(loss, g, search)?.psi;
        let b = psi_small(loss, g, &fine)?.psi;
        if a.is_finite() && b.is_finite() {
            worst = worst.max(a - b);
        }
    }
    Ok(worst)
}

/// Largest `Ψ(γ, y) − ψ(γ)` over the given `y` samples; positive values
/// mean a sample beats the reported maximum.
pub fn dominance_defect(loss: &ComponentLoss, profile: &PsiProfile, ys: &[f64]) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for (&g, &p) in profile.gammas.iter().zip(&profile.psi) {
        if p.is_finite() {
            for &y in ys {
                worst = worst.max(weighted(loss, g, y) - p);
            }
        }
    }
    worst
}

/// The losses whose landscapes are usually drawn side by side.
pub const LANDSCAPE_LOSSES: [&str; 6] = ["classic_minimax", "wasserstein", "least_squares", "hinge_linear", "absolute", "asymmetric"];

/// Export window for each landscape loss: wide enough to show the shape
/// of `Ψ` around its maximizers for every `γ`.
pub fn default_y_range(name: &str) -> (f64, f64) {
    match name {
        "classic_minimax" | "classic_nonsaturating" | "classic_linear" => (-6.0, 6.0),
        "least_squares" => (-1.0, 2.0),
        "hinge_minimax" | "hinge_nonsaturating" | "hinge_linear" => (-3.0, 3.0),
        "absolute" => (-1.0, 2.0),
        _ => (-2.0, 2.0),
    }
}

/// Writes `gamma,y,psi_big` over the full product grid to `grid_path` and
/// `gamma,psi,argmax_lo,argmax_hi` to `psi_path`. Divergent `ψ` is written
/// as `inf` with the argmax bounds at the matching infinity.
pub fn export_landscape(
    loss: &ComponentLoss,
    gammas: &[f64],
    ys: &[f64],
    search: &SearchConfig,
    grid_path: &Path,
    psi_path: &Path,
) -> Result<PsiProfile, CoreError> {
    check_grid("y", ys, f64::MIN, f64::MAX)?;
    let prof = profile(loss, gammas, search)?;

    let mut w = csv::Writer::from_writer(File::create(grid_path)?);
    w.write_record(["gamma", "y", "psi_big"])?;
    for &g in gammas {
        for &y in ys {
            w.write_record([g.to_string(), y.to_string(), weighted(loss, g, y).to_string()])?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_writer(File::create(psi_path)?);
    w.write_record(["gamma", "psi", "argmax_lo", "argmax_hi"])?;
    for ((g, p), a) in prof.gammas.iter().zip(&prof.psi).zip(&prof.argmax) {
        let (lo, hi) = a.bounds();
        w.write_record([g.to_string(), p.to_string(), lo.to_string(), hi.to_string()])?;
    }
    w.flush()?;
    Ok(prof)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss_catalog::{epsilon_weighted, get_loss};

    fn psi(name: &str, gamma: f64) -> PsiPoint {
        psi_small(&get_loss(name).unwrap(), gamma, &SearchConfig::default()).unwrap()
    }

    #[test]
    fn psi_big_examples() {
        let w = get_loss("wasserstein").unwrap();
        assert!((psi_big(&w, 0.7, 2.0).unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(psi_big(&get_loss("hinge_linear").unwrap(), 1.0, 1.0).unwrap(), 0.0);
        let cm = get_loss("classic_minimax").unwrap();
        assert!((psi_big(&cm, 0.5, 0.0).unwrap() + std::f64::consts::LN_2).abs() < 1e-12);
        let rel = get_loss("relativistic").unwrap();
        assert!(matches!(psi_big(&rel, 0.5, 0.0), Err(CoreError::Unsupported { .. })));
    }

    #[test]
    fn least_squares_maximizer_is_gamma() {
        let p = psi("least_squares", 0.3);
        assert!((p.psi + 0.21).abs() < 1e-9);
        match p.argmax {
            Argmax::Point(y) => assert!((y - 0.3).abs() < 1e-6),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn hinge_at_half_has_flat_top() {
        let p = psi("hinge_linear", 0.5);
        assert!((p.psi + 1.0).abs() < 1e-12);
        match p.argmax {
            Argmax::Interval { lo, hi } => {
                assert!((lo + 1.0).abs() < 1e-3 && (hi - 1.0).abs() < 1e-3, "[{lo}, {hi}]");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wasserstein_diverges_off_half() {
        let p = psi("wasserstein", 0.4);
        assert_eq!(p.psi, f64::INFINITY);
        assert_eq!(p.argmax, Argmax::Divergent { toward_positive: false });
        assert_eq!(psi("wasserstein", 0.6).argmax, Argmax::Divergent { toward_positive: true });
        assert_eq!(psi("wasserstein", 0.5).psi, 0.0);
    }

    #[test]
    fn asymmetric_at_three_quarters() {
        let p = psi("asymmetric", 0.75);
        assert_eq!(p.psi, 0.0);
        assert_eq!(p.argmax, Argmax::Point(0.0));
        assert_eq!(psi("asymmetric", 0.25).psi, f64::INFINITY);
    }

    #[test]
    fn classic_far_from_half_stays_finite() {
        // Ψ(0, y) = g(y) approaches 0 only as y → −∞; it is bounded, not divergent.
        let p = psi("classic_minimax", 0.0);
        assert!(p.psi.is_finite() && p.psi.abs() < 1e-12);
    }

    #[test]
    fn weighted_wasserstein_is_finite_only_at_its_balance_point() {
        let w = get_loss("wasserstein").unwrap();
        let s = SearchConfig::default();
        let w2 = epsilon_weighted(&w, 2.0).unwrap();
        assert!(psi_small(&w2, 1.0 / 3.0, &s).unwrap().psi.abs() < 1e-12);
        assert_eq!(psi_small(&w2, 0.5, &s).unwrap().psi, f64::INFINITY);
        let wh = epsilon_weighted(&w, 0.5).unwrap();
        assert!(psi_small(&wh, 2.0 / 3.0, &s).unwrap().psi.abs() < 1e-12);
    }

    #[test]
    fn golden_section_finds_parabola_peak() {
        let (x, v) = golden_max(|x| -(x - 0.3) * (x - 0.3) + 2.0, -1.0, 1.0, 1e-12);
        assert!((x - 0.3).abs() < 1e-6);
        assert!((v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn grids_are_validated() {
        let l = get_loss("least_squares").unwrap();
        let s = SearchConfig::default();
        assert!(profile(&l, &[], &s).is_err());
        assert!(profile(&l, &[0.5, 0.2], &s).is_err());
        assert!(profile(&l, &[0.0, 1.5], &s).is_err());
    }
}
