//! Spectral normalisation by power iteration.
//!
//! A weight is viewed as an `out × rest` matrix `M` (convolution kernels have
//! `rest = kh * kw * c_in`). The persistent state is the estimate `u` of the
//! top left-singular vector, so one iteration per training step keeps the
//! estimate tracking a slowly moving weight.

use crate::error::TensorError;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// How a stored 2-D weight maps onto the `out × rest` matrix `M`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightLayout {
    /// Stored as `M` itself, `[out, rest]`.
    OutByRest,
    /// Stored as `Mᵀ`, `[rest, out]` (the layout used by `Graph::linear`
    /// and `Graph::conv2d`).
    RestByOut,
}

/// Persistent power-iteration state for one weight.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerIteration {
    u: Vec<f64>,
}

/// Result of one refresh: the estimate and the singular-vector pair behind it.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralEstimate {
    pub sigma: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

fn normalize(x: &mut [f64]) -> f64 {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 {
        x.iter_mut().for_each(|v| *v /= n);
    }
    n
}

impl PowerIteration {
    /// Starts from `init`, which is normalised to unit length.
    pub fn new(mut init: Vec<f64>) -> Self {
        if normalize(&mut init) == 0.0 {
            init.iter_mut().for_each(|v| *v = 1.0);
            normalize(&mut init);
        }
        Self { u: init }
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    /// Runs `iters` power iterations on `weight`, updating the state, and
    /// returns the singular value estimate. `None` for an all-zero matrix,
    /// in which case the state is left unchanged.
    pub fn refresh(&mut self, weight: &Tensor, layout: WeightLayout, iters: usize) -> Result<Option<SpectralEstimate>, TensorError> {
        let (sr, sc) = weight.dims2("spectral_normalize")?;
        let (p, q) = match layout {
            WeightLayout::OutByRest => (sr, sc),
            WeightLayout::RestByOut => (sc, sr),
        };
        if self.u.len() != p {
            return Err(TensorError::Shape {
                op: "spectral_normalize",
                detail: format!("state has {} entries, weight has {} outputs", self.u.len(), p),
            });
        }
        let w = weight.data();
        // M[i][j] for the logical out × rest matrix.
        let m = |i: usize, j: usize| match layout {
            WeightLayout::OutByRest => w[i * q + j],
            WeightLayout::RestByOut => w[j * p + i],
        };
        let mut u = self.u.clone();
        let mut v = vec![0.0; q];
        for _ in 0..iters.max(1) {
            for (j, vj) in v.iter_mut().enumerate() {
                *vj = (0..p).map(|i| m(i, j) * u[i]).sum();
            }
            if normalize(&mut v) == 0.0 {
                return Ok(None);
            }
            for (i, ui) in u.iter_mut().enumerate() {
                *ui = (0..q).map(|j| m(i, j) * v[j]).sum();
            }
            if normalize(&mut u) == 0.0 {
                return Ok(None);
            }
        }
        let sigma: f64 = (0..p).map(|i| u[i] * (0..q).map(|j| m(i, j) * v[j]).sum::<f64>()).sum();
        self.u.clone_from(&u);
        Ok(Some(SpectralEstimate { sigma, u, v }))
    }
}

/// Divides `weight` by its power-iteration estimate of the top singular
/// value. An all-zero weight comes back unchanged (and the state untouched).
pub fn spectral_normalize(weight: &Tensor, layout: WeightLayout, state: &mut PowerIteration, iters: usize) -> Result<Tensor, TensorError> {
    match state.refresh(weight, layout, iters)? {
        Some(est) => Ok(weight.map(|x| x / est.sigma)),
        None => Ok(weight.clone()),
    }
}

impl Graph {
    /// `w / σ(w)` with `σ(w) = uᵀ M v` differentiable in `w` and the
    /// singular vectors held constant.
    pub fn spectral_normalized(&mut self, w: Var, layout: WeightLayout, est: &SpectralEstimate) -> Result<Var, TensorError> {
        let (r, c) = self.value(w).dims2("spectral_normalized")?;
        let (left, right) = match layout {
            WeightLayout::OutByRest => (&est.u, &est.v),
            WeightLayout::RestByOut => (&est.v, &est.u),
        };
        let lt = self.constant(Tensor::new(&[1, r], left.clone())?);
        let rt = self.constant(Tensor::new(&[c, 1], right.clone())?);
        let lw = self.matmul(lt, w)?;
        let sigma = self.matmul(lw, rt)?;
        let inv = self.powf(sigma, -1.0)?;
        let inv = self.repeat_rows(inv, r)?;
        self.mul_col_vector(w, inv)
    }
}
