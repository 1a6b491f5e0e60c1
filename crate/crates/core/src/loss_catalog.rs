//! Component functions `(f, g, h)` of adversarial losses.
//!
//! The discriminator maximizes `ε·E[f(D(x))] + E[g(D(x̃))]` and the generator
//! minimizes `E[h(D(x̃))]`. Every function here is a scalar map of the raw
//! discriminator score `y`.
//!
//! At a non-differentiable point the first derivative is the right-hand limit
//! and the point is reported as a kink, so checkers can refuse to draw
//! conclusions from it.

use serde::{Deserialize, Serialize};

use crate::error::CoreError;

/// Distance below which `y` counts as sitting on a kink.
pub const KINK_TOL: f64 = 1e-9;

/// Every name accepted by [`get_loss`].
pub const CATALOG: [&str; 12] = [
    "classic_minimax",
    "classic_nonsaturating",
    "classic_linear",
    "wasserstein",
    "least_squares",
    "hinge_minimax",
    "hinge_nonsaturating",
    "hinge_linear",
    "relativistic",
    "relativistic_hinge",
    "absolute",
    "asymmetric",
];

/// The five losses whose landscapes the validity theorems are stated for,
/// paired with the `y*` root of `f = g`, `f' = -g'`.
pub const REFERENCE_LOSSES: [(&str, f64); 5] = [
    ("classic_minimax", 0.0),
    ("classic_nonsaturating", 0.0),
    ("wasserstein", 0.0),
    ("least_squares", 0.5),
    ("hinge_linear", 0.0),
];

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// One scalar building block.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Component {
    /// `-log(1 + e^{-y})`
    LogSigmoid,
    /// `-log(1 + e^{y})`, equal to `-y - log(1 + e^{-y})`
    LogOneMinusSigmoid,
    /// `log(1 + e^{-y})`
    SoftplusNeg,
    /// `a·y`
    Linear(f64),
    /// `sign·(y - center)²`
    Square { sign: f64, center: f64 },
    /// `min(0, slope·y + offset)`
    HingeMin { slope: f64, offset: f64 },
    /// `sign·|y - center|`
    Abs { sign: f64, center: f64 },
}

impl Component {
    pub fn eval(&self, y: f64) -> f64 {
        match *self {
            Component::LogSigmoid => -softplus(-y),
            Component::LogOneMinusSigmoid => -softplus(y),
            Component::SoftplusNeg => softplus(-y),
            Component::Linear(a) => a * y,
            Component::Square { sign, center } => sign * (y - center) * (y - center),
            Component::HingeMin { slope, offset } => (slope * y + offset).min(0.0),
            Component::Abs { sign, center } => sign * (y - center).abs(),
        }
    }

    /// The point where the function is not differentiable, if any.
    pub fn kink(&self) -> Option<f64> {
        match *self {
            Component::HingeMin { slope, offset } => Some(-offset / slope),
            Component::Abs { center, .. } => Some(center),
            _ => None,
        }
    }

    pub fn is_kink(&self, y: f64) -> bool {
        self.kink().is_some_and(|k| (y - k).abs() < KINK_TOL)
    }

    /// Left- and right-hand first derivatives. They coincide except at a kink.
    pub fn slopes(&self, y: f64) -> (f64, f64) {
        match *self {
            Component::HingeMin { slope, offset } => {
                let k = -offset / slope;
                // Active (sloped) piece is where slope·y + offset < 0.
                let active = |right: bool| {
                    if (y - k).abs() < KINK_TOL {
                        (slope < 0.0) == right
                    } else {
                        slope * y + offset < 0.0
                    }
                };
                let d = |on: bool| if on { slope } else { 0.0 };
                (d(active(false)), d(active(true)))
            }
            Component::Abs { sign, center } => {
                if (y - center).abs() < KINK_TOL {
                    (-sign, sign)
                } else {
                    let s = sign * (y - center).signum();
                    (s, s)
                }
            }
            _ => {
                let d = self.smooth_derivative(y);
                (d, d)
            }
        }
    }

    /// Right-hand first derivative.
    pub fn derivative(&self, y: f64) -> f64 {
        self.slopes(y).1
    }

    fn smooth_derivative(&self, y: f64) -> f64 {
        match *self {
            Component::LogSigmoid => sigmoid(-y),
            Component::LogOneMinusSigmoid => -sigmoid(y),
            Component::SoftplusNeg => -sigmoid(-y),
            Component::Linear(a) => a,
            Component::Square { sign, center } => 2.0 * sign * (y - center),
            Component::HingeMin { .. } | Component::Abs { .. } => unreachable!(),
        }
    }

    /// Second derivative; zero on the linear pieces of piecewise functions.
    pub fn second_derivative(&self, y: f64) -> f64 {
        match *self {
            Component::LogSigmoid | Component::LogOneMinusSigmoid => {
                let s = sigmoid(y);
                -s * (1.0 - s)
            }
            Component::SoftplusNeg => {
                let s = sigmoid(y);
                s * (1.0 - s)
            }
            Component::Square { sign, .. } => 2.0 * sign,
            Component::Linear(_) | Component::HingeMin { .. } | Component::Abs { .. } => 0.0,
        }
    }
}

/// Which generator loss `h` accompanies a discriminator pair `(f, g)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorVariant {
    /// `h = g`
    Minimax,
    /// `h(y) = log(1 + e^{-y})`
    Nonsaturating,
    /// `h(y) = -y`
    Linear,
}

/// A named `(f, g, h)` triple with its discriminator weight `ε`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComponentLoss {
    pub name: &'static str,
    pub f: Component,
    pub g: Component,
    pub h: Component,
    /// False for losses that compare each score with the mean score of the
    /// opposite batch; those have no per-sample landscape.
    pub pointwise: bool,
    pub epsilon: f64,
}

/// Raw (unweighted) derivatives of `f` and `g` at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Derivatives {
    pub f1: f64,
    pub g1: f64,
    pub f2: f64,
    pub g2: f64,
    /// Set when `f` or `g` is not differentiable at the point; `f1`/`g1` are
    /// then right-hand limits.
    pub kink: bool,
}

const CLASSIC_F: Component = Component::LogSigmoid;
const CLASSIC_G: Component = Component::LogOneMinusSigmoid;
const HINGE_F: Component = Component::HingeMin { slope: 1.0, offset: -1.0 };
const HINGE_G: Component = Component::HingeMin { slope: -1.0, offset: -1.0 };
const NEG_Y: Component = Component::Linear(-1.0);

pub fn get_loss(name: &str) -> Result<ComponentLoss, CoreError> {
    let name: &'static str = CATALOG
        .iter()
        .find(|&&n| n == name)
        .ok_or_else(|| CoreError::NotInCatalog(name.to_string()))?;
    let (f, g, h, pointwise) = match name {
        "classic_minimax" => (CLASSIC_F, CLASSIC_G, CLASSIC_G, true),
        "classic_nonsaturating" => (CLASSIC_F, CLASSIC_G, Component::SoftplusNeg, true),
        "classic_linear" => (CLASSIC_F, CLASSIC_G, NEG_Y, true),
        "wasserstein" => (Component::Linear(1.0), NEG_Y, NEG_Y, true),
        "least_squares" => (
            Component::Square { sign: -1.0, center: 1.0 },
            Component::Square { sign: -1.0, center: 0.0 },
            Component::Square { sign: 1.0, center: 1.0 },
            true,
        ),
        "hinge_minimax" => (HINGE_F, HINGE_G, HINGE_G, true),
        "hinge_nonsaturating" => (HINGE_F, HINGE_G, Component::SoftplusNeg, true),
        "hinge_linear" => (HINGE_F, HINGE_G, NEG_Y, true),
        // Applied to scores centred on the opposite batch mean.
        "relativistic" => (CLASSIC_F, CLASSIC_G, CLASSIC_G, false),
        "relativistic_hinge" => (HINGE_F, HINGE_G, HINGE_G, false),
        "absolute" => (
            Component::Abs { sign: -1.0, center: 1.0 },
            Component::Abs { sign: -1.0, center: 0.0 },
            Component::Abs { sign: 1.0, center: 1.0 },
            true,
        ),
        "asymmetric" => (Component::Abs { sign: -1.0, center: 0.0 }, NEG_Y, NEG_Y, true),
        _ => unreachable!("name checked against CATALOG"),
    };
    Ok(ComponentLoss { name, f, g, h, pointwise, epsilon: 1.0 })
}

/// Copy of `loss` with the discriminator's `f` term weighted by `eps`.
pub fn epsilon_weighted(loss: &ComponentLoss, eps: f64) -> Result<ComponentLoss, CoreError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(CoreError::InvalidWeight(eps));
    }
    if !loss.pointwise {
        return Err(CoreError::Unsupported { name: loss.name, what: "epsilon weighting" });
    }
    Ok(ComponentLoss { epsilon: eps, ..loss.clone() })
}

pub fn eval_derivatives(loss: &ComponentLoss, y: f64) -> Derivatives {
    Derivatives {
        f1: loss.f.derivative(y),
        g1: loss.g.derivative(y),
        f2: loss.f.second_derivative(y),
        g2: loss.g.second_derivative(y),
        kink: loss.f.is_kink(y) || loss.g.is_kink(y),
    }
}

impl ComponentLoss {
    /// Replaces `h` according to the generator variant.
    pub fn with_generator(&self, variant: GeneratorVariant) -> ComponentLoss {
        let h = match variant {
            GeneratorVariant::Minimax => self.g,
            GeneratorVariant::Nonsaturating => Component::SoftplusNeg,
            GeneratorVariant::Linear => NEG_Y,
        };
        ComponentLoss { h, ..self.clone() }
    }

    /// Kinks of `f` and `g`, sorted and deduplicated.
    pub fn kinks(&self) -> Vec<f64> {
        let mut k: Vec<f64> = [self.f.kink(), self.g.kink()].into_iter().flatten().collect();
        k.sort_by(f64::total_cmp);
        k.dedup();
        k
    }

    /// Name plus the weight when it is not 1, e.g. `hinge_linear@eps=2`.
    pub fn label(&self) -> String {
        if self.epsilon == 1.0 {
            self.name.to_string()
        } else {
            format!("{}@eps={}", self.name, self.epsilon)
        }
    }
}
