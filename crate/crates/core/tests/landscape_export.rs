use advloss_core::landscape::{
    default_y_range, dominance_defect, export_landscape, gamma_grid, profile, psi_small, refinement_defect, SearchConfig, LANDSCAPE_LOSSES,
};
use advloss_core::get_loss;

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn read_rows(path: &std::path::Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn hinge_export_on_a_small_grid() {
    let dir = tempfile::tempdir().unwrap();
    let (grid, psi) = (dir.path().join("grid.csv"), dir.path().join("psi.csv"));
    let l = get_loss("hinge_linear").unwrap();
    let ys = [-2.0, -1.0, 0.0, 1.0, 2.0];
    export_landscape(&l, &[0.0, 0.5, 1.0], &ys, &SearchConfig::default(), &grid, &psi).unwrap();

    let (header, rows) = read_rows(&grid);
    assert_eq!(header, ["gamma", "y", "psi_big"]);
    assert_eq!(rows.len(), 15);
    let (header, rows) = read_rows(&psi);
    assert_eq!(header, ["gamma", "psi", "argmax_lo", "argmax_hi"]);
    assert_eq!(rows[1][1].parse::<f64>().unwrap(), -1.0);
    let lo: f64 = rows[1][2].parse().unwrap();
    let hi: f64 = rows[1][3].parse().unwrap();
    assert!((lo + 1.0).abs() < 1e-3 && (hi - 1.0).abs() < 1e-3);
}

#[test]
fn divergence_is_written_as_inf() {
    let dir = tempfile::tempdir().unwrap();
    let (grid, psi) = (dir.path().join("grid.csv"), dir.path().join("psi.csv"));
    let l = get_loss("wasserstein").unwrap();
    export_landscape(&l, &[0.25, 0.5, 0.75], &[-1.0, 1.0], &SearchConfig::default(), &grid, &psi).unwrap();
    let (_, rows) = read_rows(&psi);
    assert_eq!(rows[0][1], "inf");
    assert_eq!(rows[0][2], "-inf");
    assert_eq!(rows[1][1], "0");
    assert_eq!(rows[2][3], "inf");
}

#[test]
fn least_squares_minimum_on_full_grid() {
    let l = get_loss("least_squares").unwrap();
    let p = profile(&l, &gamma_grid(200), &SearchConfig::default()).unwrap();
    let (i, v) = p.psi.iter().enumerate().fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
    assert!((p.gammas[i] - 0.5).abs() < 1e-12);
    assert!((v + 0.25).abs() < 1e-9);
}

#[test]
fn export_is_consistent_with_psi_when_the_grid_holds_the_maximizer() {
    // For least squares the maximizer is y = γ, so a y grid equal to the γ
    // grid contains it.
    let dir = tempfile::tempdir().unwrap();
    let (grid, psi) = (dir.path().join("grid.csv"), dir.path().join("psi.csv"));
    let l = get_loss("least_squares").unwrap();
    let gammas = gamma_grid(20);
    let prof = export_landscape(&l, &gammas, &gammas, &SearchConfig::default(), &grid, &psi).unwrap();
    let (_, rows) = read_rows(&grid);
    for (k, &g) in gammas.iter().enumerate() {
        let col_max = rows[k * gammas.len()..(k + 1) * gammas.len()]
            .iter()
            .map(|r| r[2].parse::<f64>().unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((col_max - prof.psi[k]).abs() < 1e-7, "γ={g}");
    }
}

#[test]
fn landscape_losses_satisfy_landscape_invariants() {
    let s = SearchConfig::default();
    let gammas = gamma_grid(100);
    for name in LANDSCAPE_LOSSES {
        let l = get_loss(name).unwrap();
        let p = profile(&l, &gammas, &s).unwrap();
        let (lo, hi) = default_y_range(name);
        assert!(dominance_defect(&l, &p, &linspace(lo, hi, 401)) <= 1e-9, "{name}");
        assert!(dominance_defect(&l, &p, &linspace(-50.0, 50.0, 1001)) <= 1e-9, "{name}");
        assert!(refinement_defect(&l, &gammas, &s).unwrap() <= 1e-7, "{name}");
        let sym = p.symmetry_defect();
        if name == "asymmetric" {
            assert!(sym > 1e-6, "asymmetric loss passed the symmetry check");
        } else {
            assert!(sym <= 1e-6, "{name}: {sym}");
        }
    }
}

#[test]
fn unwritable_path_is_an_io_error() {
    let l = get_loss("least_squares").unwrap();
    let bad = std::path::Path::new("/nonexistent-dir/grid.csv");
    let err = export_landscape(&l, &[0.5], &[0.0], &SearchConfig::default(), bad, bad).unwrap_err();
    assert!(matches!(err, advloss_core::CoreError::Io(_)));
    assert!(psi_small(&l, 0.5, &SearchConfig::default()).is_ok());
}
