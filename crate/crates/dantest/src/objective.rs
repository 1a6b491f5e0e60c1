//! Adversarial objectives and gradient penalties on the tape.
//!
//! Everything here is in minimisation form: the critic minimises
//! `-(ε·mean f(real) + mean g(fake)) + penalty`, the classifier minimises
//! `mean h(fake)`.

use std::rc::Rc;

use advloss_autodiff::{Graph, SpectralEstimate, Tensor, TensorError, Var};
use advloss_core::{Component, ComponentLoss};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::models::Discriminator;

type R<T> = Result<T, TensorError>;

/// Added under the square root of gradient norms so their own gradient
/// stays finite at zero.
pub const NORM_EPS: f64 = 1e-12;

/// Applies one component function element-wise.
pub fn apply_component(g: &mut Graph, c: Component, y: Var) -> R<Var> {
    match c {
        Component::LogSigmoid => {
            let n = g.neg(y)?;
            let s = g.softplus(n)?;
            g.neg(s)
        }
        Component::LogOneMinusSigmoid => {
            let s = g.softplus(y)?;
            g.neg(s)
        }
        Component::SoftplusNeg => {
            let n = g.neg(y)?;
            g.softplus(n)
        }
        Component::Linear(a) => g.scale(y, a),
        Component::Square { sign, center } => {
            let d = g.add_scalar(y, -center)?;
            let sq = g.square(d)?;
            g.scale(sq, sign)
        }
        Component::HingeMin { slope, offset } => {
            // min(0, z) = z - max(0, z)
            let z = g.scale(y, slope)?;
            let z = g.add_scalar(z, offset)?;
            let pos = g.relu(z)?;
            g.sub(z, pos)
        }
        Component::Abs { sign, center } => {
            let d = g.add_scalar(y, -center)?;
            let a = g.abs(d)?;
            g.scale(a, sign)
        }
    }
}

fn mean_of(g: &mut Graph, c: Component, y: Var) -> R<Var> {
    let v = apply_component(g, c, y)?;
    g.mean_all(v)
}

/// `s - mean(other)`, the score of each sample relative to the opposite batch.
fn centered(g: &mut Graph, s: Var, other: Var) -> R<Var> {
    let n = g.shape(s)[0];
    let m = g.mean_all(other)?;
    let m = g.repeat_rows(m, n)?;
    g.sub(s, m)
}

/// Critic objective (without penalty) from `[B, 1]` real and fake scores.
///
/// Pointwise losses give `-(ε·mean f(real) + mean g(fake))`. Batch-coupled
/// losses apply `f` and `g` to scores centred on the opposite batch mean:
/// `-(mean f(C_r - mean C_f) + mean g(C_f - mean C_r))`.
pub fn critic_objective(g: &mut Graph, loss: &ComponentLoss, real: Var, fake: Var) -> R<Var> {
    let (real_in, fake_in) = if loss.pointwise {
        (real, fake)
    } else {
        (centered(g, real, fake)?, centered(g, fake, real)?)
    };
    let fr = mean_of(g, loss.f, real_in)?;
    let fr = g.scale(fr, loss.epsilon)?;
    let gf = mean_of(g, loss.g, fake_in)?;
    let total = g.add(fr, gf)?;
    g.neg(total)
}

/// Classifier objective. Pointwise losses give `mean h(fake)`; batch-coupled
/// ones swap the roles of the two batches in the critic objective.
/// `real` is only read for batch-coupled losses.
pub fn generator_objective(g: &mut Graph, loss: &ComponentLoss, real: Var, fake: Var) -> R<Var> {
    if loss.pointwise {
        return mean_of(g, loss.h, fake);
    }
    let fake_in = centered(g, fake, real)?;
    let real_in = centered(g, real, fake)?;
    let a = mean_of(g, loss.f, fake_in)?;
    let b = mean_of(g, loss.g, real_in)?;
    let total = g.add(a, b)?;
    g.neg(total)
}

/// Where penalty points are drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    None,
    /// Interpolation between real and fake pairs.
    Coupled,
    /// Real pairs plus Gaussian noise of scale `c`.
    Local,
    R1,
    R2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// `(‖∇‖ - k)²`
    TwoSide,
    /// Penalises only norms above `k`.
    OneSide,
}

/// How the one-side penalty is written.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OneSideForm {
    /// `max(0, ‖∇‖ - k)²`
    SquaredHinge,
    /// `max(‖∇‖, k)`
    Raw,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PenaltySpec {
    pub kind: PenaltyKind,
    pub side: Side,
    pub lambda: f64,
    pub k: f64,
    pub c: f64,
    pub one_side_form: OneSideForm,
}

impl Default for PenaltySpec {
    fn default() -> Self {
        Self { kind: PenaltyKind::None, side: Side::TwoSide, lambda: 10.0, k: 1.0, c: 0.01, one_side_form: OneSideForm::SquaredHinge }
    }
}

impl PenaltySpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn of(kind: PenaltyKind, side: Side) -> Self {
        Self { kind, side, ..Self::default() }
    }

    /// Short column label: `none`, `tcgp`, `ocgp`, `tlgp`, `olgp`, `r1`, `r2`.
    pub fn short_name(&self) -> &'static str {
        match (self.kind, self.side) {
            (PenaltyKind::None, _) => "none",
            (PenaltyKind::Coupled, Side::TwoSide) => "tcgp",
            (PenaltyKind::Coupled, Side::OneSide) => "ocgp",
            (PenaltyKind::Local, Side::TwoSide) => "tlgp",
            (PenaltyKind::Local, Side::OneSide) => "olgp",
            (PenaltyKind::R1, _) => "r1",
            (PenaltyKind::R2, _) => "r2",
        }
    }
}

/// An `(images, labels)` batch: `[B, 28, 28, 1]` and `[B, 10]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Pairs {
    pub images: Tensor,
    pub labels: Tensor,
}

fn lerp(a: &Tensor, b: &Tensor, u: &[f64]) -> Tensor {
    let per = a.len() / u.len().max(1);
    let mut out = a.clone();
    for (i, (o, bv)) in out.data_mut().iter_mut().zip(b.data()).enumerate() {
        let t = u[i / per];
        *o += t * (bv - *o);
    }
    out
}

/// `real + u·(fake - real)` per sample, on both images and labels.
pub fn interpolate(real: &Pairs, fake: &Pairs, u: &[f64]) -> Pairs {
    Pairs { images: lerp(&real.images, &fake.images, u), labels: lerp(&real.labels, &fake.labels, u) }
}

/// Draws the points a penalty is evaluated at.
pub fn sample_penalty_points(kind: PenaltyKind, real: &Pairs, fake: &Pairs, c: f64, rng: &mut impl Rng) -> Pairs {
    match kind {
        PenaltyKind::None | PenaltyKind::R1 => real.clone(),
        PenaltyKind::R2 => fake.clone(),
        PenaltyKind::Coupled => {
            let b = real.labels.shape()[0];
            let u: Vec<f64> = (0..b).map(|_| rng.random::<f64>()).collect();
            interpolate(real, fake, &u)
        }
        PenaltyKind::Local => {
            let mut noisy = real.clone();
            for v in noisy.images.data_mut().iter_mut().chain(noisy.labels.data_mut()) {
                let z: f64 = rng.sample(StandardNormal);
                *v += c * z;
            }
            noisy
        }
    }
}

/// Per-sample `‖∇_(x, y) D(x, y)‖` at `points`, as a `[B, 1]` node whose
/// value is differentiable in the critic parameters `p`. Squared norms are
/// returned instead when `squared` is set.
pub fn critic_gradient_norms(
    g: &mut Graph,
    d: &Discriminator,
    p: &[Var],
    spectral: Option<&[Option<SpectralEstimate>]>,
    points: &Pairs,
    squared: bool,
) -> R<Var> {
    let b = points.labels.shape()[0];
    let x = g.param(points.images.clone());
    let y = g.param(points.labels.clone());
    let s = d.forward(g, p, x, y, spectral)?;
    let total = g.sum_all(s)?;
    let grads = g.grad(total, &[x, y], true)?;
    let gx = g.reshape(grads[0], &[b, points.images.len() / b.max(1)])?;
    let gx = g.square(gx)?;
    let gx = g.group_sum_cols(gx, points.images.len() / b.max(1))?;
    let gy = g.square(grads[1])?;
    let gy = g.group_sum_cols(gy, points.labels.shape()[1])?;
    let sq = g.add(gx, gy)?;
    if squared {
        return Ok(sq);
    }
    let sq = g.add_scalar(sq, NORM_EPS)?;
    g.powf(sq, 0.5)
}

/// `λ·mean R(n)` for `[B, 1]` gradient norms `n` (squared norms for R1/R2).
pub fn penalty_from_norms(g: &mut Graph, spec: &PenaltySpec, n: Var) -> R<Var> {
    let r = match (spec.kind, spec.side) {
        (PenaltyKind::R1 | PenaltyKind::R2, _) => n,
        (_, Side::TwoSide) => {
            let d = g.add_scalar(n, -spec.k)?;
            g.square(d)?
        }
        (_, Side::OneSide) => {
            let d = g.add_scalar(n, -spec.k)?;
            let h = g.relu(d)?;
            match spec.one_side_form {
                OneSideForm::SquaredHinge => g.square(h)?,
                OneSideForm::Raw => g.add_scalar(h, spec.k)?,
            }
        }
    };
    let m = g.mean_all(r)?;
    g.scale(m, spec.lambda)
}

/// The full penalty term, or `None` for `PenaltyKind::None`.
pub fn penalty_term(
    g: &mut Graph,
    spec: &PenaltySpec,
    d: &Discriminator,
    p: &[Var],
    spectral: Option<&[Option<SpectralEstimate>]>,
    points: &Pairs,
) -> R<Option<Var>> {
    if spec.kind == PenaltyKind::None {
        return Ok(None);
    }
    let squared = matches!(spec.kind, PenaltyKind::R1 | PenaltyKind::R2);
    let n = critic_gradient_norms(g, d, p, spectral, points, squared)?;
    penalty_from_norms(g, spec, n).map(Some)
}

/// Splits `[2B, 1]` scores into the first and second halves.
pub fn split_halves(g: &mut Graph, s: Var) -> R<(Var, Var)> {
    let n = g.shape(s)[0] / 2;
    let first = g.gather(s, Rc::new((0..n).collect()), &[n, 1])?;
    let second = g.gather(s, Rc::new((n..2 * n).collect()), &[n, 1])?;
    Ok((first, second))
}
