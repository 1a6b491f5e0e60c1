//! Named experiment grids at desk or full scale.

use std::str::FromStr;

use advloss_core::CATALOG;
use advloss_dantest::{DanConfig, Variant};
use serde::{Deserialize, Serialize};

use crate::sweep::{Regularizer, SweepSpec};

/// How long and how often each cell is trained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// 5000 steps on a 10k-image training subset, 3 runs per cell.
    Desk,
    /// 100k steps on the full training set, 10 runs per cell.
    Paper,
}

impl Scale {
    pub fn apply(self, config: &mut DanConfig) {
        match self {
            Scale::Desk => {
                config.steps = 5000;
                config.train_subset = Some(10_000);
            }
            Scale::Paper => {
                config.steps = 100_000;
                config.train_subset = None;
            }
        }
    }

    pub fn runs_per_cell(self) -> usize {
        match self {
            Scale::Desk => 3,
            Scale::Paper => 10,
        }
    }

    /// Rescales a sweep, keeping its axes.
    pub fn apply_sweep(self, spec: &mut SweepSpec) {
        self.apply(&mut spec.base);
        spec.runs_per_cell = self.runs_per_cell();
    }
}

impl FromStr for Scale {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "desk" => Ok(Scale::Desk),
            "paper" => Ok(Scale::Paper),
            _ => Err(format!("unknown preset {s:?} (desk or paper)")),
        }
    }
}

pub const EXPERIMENTS: [(&str, &str); 6] = [
    ("epsilon", "weighted critic objectives: 3 losses x 5 weights, spectral normalisation"),
    ("grid", "every catalog loss x 14 regularisers"),
    ("imbalance", "6 gradient penalties x 3 dataset variants, classic nonsaturating loss"),
    ("lipschitz", "coupled and local penalties x 5 Lipschitz targets"),
    ("penalty-weight", "R1/R2 with and without spectral normalisation x 5 weights x 3 losses"),
    ("momentum", "beta1 of G x beta1 of D on a 4x4 grid, SN plus coupled penalties"),
];

fn regs(names: &[&str]) -> Vec<Regularizer> {
    names.iter().map(|n| n.parse().expect("built-in regularizer")).collect()
}

fn strings(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

const SWEEP_VALUES: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];
const MOMENTA: [f64; 4] = [-0.5, 0.0, 0.5, 0.9];

/// The named grid at the given scale, or `None` for an unknown name.
pub fn experiment(name: &str, scale: Scale) -> Option<SweepSpec> {
    let nonsat = "classic_nonsaturating";
    let mut spec = match name {
        "epsilon" => SweepSpec {
            losses: strings(&[nonsat, "wasserstein", "hinge_linear"]),
            regularizers: regs(&["sn"]),
            epsilons: vec![0.5, 0.9, 1.0, 1.1, 2.0],
            ..SweepSpec::default()
        },
        "grid" => SweepSpec { losses: strings(&CATALOG), regularizers: regs(&Regularizer::GRID), ..SweepSpec::default() },
        "imbalance" => SweepSpec {
            losses: strings(&[nonsat]),
            regularizers: regs(&["tcgp", "ocgp", "tlgp", "olgp", "r1", "r2"]),
            datasets: vec![Variant::Standard, Variant::Imbalanced, Variant::VeryImbalanced],
            ..SweepSpec::default()
        },
        "lipschitz" => SweepSpec {
            losses: strings(&[nonsat]),
            regularizers: regs(&["tcgp", "ocgp", "tlgp", "olgp"]),
            ks: SWEEP_VALUES.to_vec(),
            ..SweepSpec::default()
        },
        "penalty-weight" => SweepSpec {
            losses: strings(&[nonsat, "wasserstein", "hinge_linear"]),
            regularizers: regs(&["r1", "r2", "sn+r1", "sn+r2"]),
            lambdas: SWEEP_VALUES.to_vec(),
            ..SweepSpec::default()
        },
        "momentum" => SweepSpec {
            losses: strings(&[nonsat, "hinge_linear"]),
            regularizers: regs(&["sn+tcgp", "sn+ocgp"]),
            beta1s: MOMENTA.iter().flat_map(|&g| MOMENTA.iter().map(move |&d| [g, d])).collect(),
            ..SweepSpec::default()
        },
        _ => return None,
    };
    scale.apply_sweep(&mut spec);
    Some(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cells(name: &str) -> usize {
        experiment(name, Scale::Desk).unwrap().cells().len()
    }

    #[test]
    fn grid_sizes() {
        assert_eq!(cells("epsilon"), 15);
        assert_eq!(cells("grid"), 168);
        assert_eq!(cells("imbalance"), 18);
        assert_eq!(cells("lipschitz"), 20);
        assert_eq!(cells("penalty-weight"), 60);
        assert_eq!(cells("momentum"), 64);
        assert!(experiment("nope", Scale::Desk).is_none());
    }

    #[test]
    fn every_experiment_is_valid_at_both_scales() {
        for (name, _) in EXPERIMENTS {
            for scale in [Scale::Desk, Scale::Paper] {
                let spec = experiment(name, scale).unwrap();
                spec.validate().unwrap();
                assert_eq!(spec.runs_per_cell, scale.runs_per_cell());
            }
        }
    }

    #[test]
    fn scales() {
        let desk = experiment("epsilon", Scale::Desk).unwrap();
        assert_eq!((desk.base.steps, desk.base.train_subset, desk.runs_per_cell), (5000, Some(10_000), 3));
        let paper = experiment("epsilon", Scale::Paper).unwrap();
        assert_eq!((paper.base.steps, paper.base.train_subset, paper.runs_per_cell), (100_000, None, 10));
        assert!(desk.cells().iter().all(|c| c.config.spectral_norm));
    }
}
